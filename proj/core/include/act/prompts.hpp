// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace act {

/// Directory-backed store of prompt templates (`<id>.txt`) and in-context
/// exemplar sets (`<id>.jsonl`). Templates use `{{name}}` placeholders.
class PromptRegistry {
public:
    static PromptRegistry load(const std::filesystem::path& directory);

    /// Registry shipped with the library (source tree or install prefix).
    static const PromptRegistry& builtin();
    static std::filesystem::path builtin_directory();

    bool has_template(std::string_view id) const;
    const std::string& template_text(std::string_view id) const;
    const std::vector<nlohmann::json>& exemplars(std::string_view id) const;

    /// Substitutes every `{{name}}`; missing variables and unknown template
    /// ids are configuration errors.
    std::string fill(std::string_view id, const std::map<std::string, std::string>& variables) const;

    std::vector<std::string> template_ids() const;
    const std::filesystem::path& directory() const { return directory_; }

private:
    std::filesystem::path directory_;
    std::map<std::string, std::string, std::less<>> templates_;
    std::map<std::string, std::vector<nlohmann::json>, std::less<>> exemplars_;
};

std::string fill_placeholders(std::string_view text, const std::map<std::string, std::string>& variables);

} // namespace act
