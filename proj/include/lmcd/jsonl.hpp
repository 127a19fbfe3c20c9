#pragma once

#include <functional>
#include <string>

#include <json.hpp>

namespace lmcd {

// Calls fn(object, "path:line") for every non-blank line of a .jsonl file.
// Raises DataError on unreadable files, parse errors, or non-object lines.
void for_each_jsonl(
    const std::string& path,
    const std::function<void(const nlohmann::json&, const std::string&)>& fn);

}  // namespace lmcd
