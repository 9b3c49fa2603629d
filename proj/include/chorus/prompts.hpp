#pragma once

#include <map>
#include <string>

namespace chorus {

// Inter-model prompt templates are configuration data: plain text with
// {placeholder} slots. Compiled-in defaults can be overridden per-template
// by files in a directory (one <name>.txt per template).
class PromptLibrary {
public:
    static const PromptLibrary& defaults();
    static PromptLibrary load_dir(const std::string& dir);

    std::string render(const std::string& name,
                       const std::map<std::string, std::string>& vars) const;
    const std::string& raw(const std::string& name) const;
    bool has(const std::string& name) const { return templates_.count(name) > 0; }

    void set(const std::string& name, std::string text) { templates_[name] = std::move(text); }

private:
    std::map<std::string, std::string> templates_;
};

}  // namespace chorus
