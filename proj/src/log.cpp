#include "issgd/log.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace issgd {

void init_logging() {
  auto logger = spdlog::stderr_color_mt("issgd");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  spdlog::level::level_enum level = spdlog::level::info;
  if (const char* env = std::getenv("ISSGD_LOG")) {
    const std::string text(env);
    level = spdlog::level::from_str(text);
    if (level == spdlog::level::off && text != "off") {
      level = spdlog::level::info;
      spdlog::warn("ISSGD_LOG='{}' is not a log level; using info", text);
    }
  }
  spdlog::set_level(level);
}

}  // namespace issgd
