#pragma once

namespace popdyn {

#ifndef POPDYN_VERSION
#define POPDYN_VERSION "0.1.0"
#endif

inline const char* version() { return POPDYN_VERSION; }

}  // namespace popdyn
