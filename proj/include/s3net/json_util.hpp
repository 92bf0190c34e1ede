#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "s3net/errors.hpp"

namespace s3net {

// Rejects unknown keys so configuration typos fail loudly instead of being
// silently ignored.
inline void require_known_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                               const std::string& context) {
    if (!obj.is_object()) {
        throw ConfigError(context + ": expected a JSON object");
    }
    for (const auto& item : obj.items()) {
        if (allowed.find(item.key()) == allowed.end()) {
            throw ConfigError(context + ": unknown key '" + item.key() + "'");
        }
    }
}

template <typename T>
T json_get(const nlohmann::json& obj, const std::string& key, const T& fallback,
           const std::string& context) {
    if (!obj.contains(key)) {
        return fallback;
    }
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(context + ": bad value for '" + key + "'");
    }
}

} // namespace s3net
