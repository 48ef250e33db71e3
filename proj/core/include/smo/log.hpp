#pragma once

#include <string>

namespace smo::log {

// 0 = silent, 1 = warnings (default), 2 = info.
void set_verbosity(int level);
int verbosity();

void warn(const std::string& msg);
void info(const std::string& msg);

}  // namespace smo::log
