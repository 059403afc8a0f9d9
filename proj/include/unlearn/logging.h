#pragma once

#include <spdlog/spdlog.h>

namespace unlearn {

// Library-wide logger writing to stderr. Verbosity comes from the
// UNLEARN_LOG environment variable (trace|debug|info|warn|error|off);
// the default is warn.
spdlog::logger& Log();

}  // namespace unlearn
