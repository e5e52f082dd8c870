#pragma once

#include <memory>

#include <spdlog/spdlog.h>

namespace springtwin {

// Library-wide logger ("springtwin"), stderr sink, created on first use.
std::shared_ptr<spdlog::logger> logger();

}  // namespace springtwin
