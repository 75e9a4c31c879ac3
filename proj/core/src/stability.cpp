#include "sgoif/stability.hpp"

// Header-only closed forms; this translation unit exists so the module has
// a home in the library and the header stays cheap to include.
