// SPDX-License-Identifier: Apache-2.0
#include "act/prompts.hpp"

#include "act/common.hpp"

#include <cstdlib>
#include <mutex>

#ifndef ACT_PROMPT_DIR
#define ACT_PROMPT_DIR ""
#endif
#ifndef ACT_INSTALLED_PROMPT_DIR
#define ACT_INSTALLED_PROMPT_DIR ""
#endif

namespace act {

namespace fs = std::filesystem;

PromptRegistry PromptRegistry::load(const fs::path& directory)
{
    if (!fs::is_directory(directory)) {
        fail(ErrorKind::Configuration, "prompt registry directory not found: " + directory.string());
    }
    PromptRegistry registry;
    registry.directory_ = directory;
    std::vector<fs::path> entries;
    for (const auto& entry : fs::directory_iterator(directory)) {
        if (entry.is_regular_file()) {
            entries.push_back(entry.path());
        }
    }
    std::sort(entries.begin(), entries.end());
    for (const auto& path : entries) {
        auto id = path.stem().string();
        if (path.extension() == ".txt") {
            auto text = read_file(path);
            // Files end with a newline for editor friendliness; the template does not.
            if (!text.empty() && text.back() == '\n') {
                text.pop_back();
            }
            registry.templates_.emplace(id, std::move(text));
        } else if (path.extension() == ".jsonl") {
            std::vector<nlohmann::json> rows;
            for (const auto& line : split_lines(read_file(path))) {
                if (is_blank(line)) {
                    continue;
                }
                try {
                    rows.push_back(nlohmann::json::parse(line));
                } catch (const nlohmann::json::exception& e) {
                    fail(ErrorKind::Configuration, "bad exemplar line in " + path.string() + ": " + e.what());
                }
            }
            registry.exemplars_.emplace(id, std::move(rows));
        }
    }
    return registry;
}

fs::path PromptRegistry::builtin_directory()
{
    for (const char* candidate : {ACT_PROMPT_DIR, ACT_INSTALLED_PROMPT_DIR}) {
        if (candidate[0] != '\0' && fs::is_directory(candidate)) {
            return candidate;
        }
    }
    fail(ErrorKind::Configuration, "built-in prompt registry not found");
}

const PromptRegistry& PromptRegistry::builtin()
{
    static const PromptRegistry registry = load(builtin_directory());
    return registry;
}

bool PromptRegistry::has_template(std::string_view id) const { return templates_.find(id) != templates_.end(); }

const std::string& PromptRegistry::template_text(std::string_view id) const
{
    auto it = templates_.find(id);
    if (it == templates_.end()) {
        fail(ErrorKind::Configuration, "unknown template_id '" + std::string(id) + "'");
    }
    return it->second;
}

const std::vector<nlohmann::json>& PromptRegistry::exemplars(std::string_view id) const
{
    auto it = exemplars_.find(id);
    if (it == exemplars_.end()) {
        fail(ErrorKind::Configuration, "unknown exemplar set '" + std::string(id) + "'");
    }
    return it->second;
}

std::string PromptRegistry::fill(std::string_view id, const std::map<std::string, std::string>& variables) const
{
    return fill_placeholders(template_text(id), variables);
}

std::vector<std::string> PromptRegistry::template_ids() const
{
    std::vector<std::string> ids;
    for (const auto& [id, text] : templates_) {
        ids.push_back(id);
    }
    return ids;
}

std::string fill_placeholders(std::string_view text, const std::map<std::string, std::string>& variables)
{
    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto open = text.find("{{", pos);
        if (open == std::string_view::npos) {
            out.append(text.substr(pos));
            break;
        }
        auto close = text.find("}}", open + 2);
        if (close == std::string_view::npos) {
            fail(ErrorKind::Configuration, "unterminated placeholder in template");
        }
        out.append(text.substr(pos, open - pos));
        auto name = std::string(text.substr(open + 2, close - open - 2));
        auto it = variables.find(name);
        if (it == variables.end()) {
            fail(ErrorKind::Configuration, "template variable '" + name + "' not provided");
        }
        out.append(it->second);
        pos = close + 2;
    }
    return out;
}

} // namespace act
