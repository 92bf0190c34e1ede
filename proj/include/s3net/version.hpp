#pragma once

namespace s3net {

inline constexpr const char* kLibraryVersion = "0.1.0";

} // namespace s3net
