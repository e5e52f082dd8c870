#include "springtwin/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>

namespace springtwin {

std::shared_ptr<spdlog::logger> logger() {
  static const std::shared_ptr<spdlog::logger> instance = [] {
    auto existing = spdlog::get("springtwin");
    if (existing) return existing;
    auto created = spdlog::stderr_color_mt("springtwin");
    created->set_level(spdlog::level::warn);
    return created;
  }();
  return instance;
}

}  // namespace springtwin
