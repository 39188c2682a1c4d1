#ifndef ECHO_VERSION_HPP
#define ECHO_VERSION_HPP

namespace echo {

inline constexpr const char* kVersion = "0.1.0";

}

#endif
