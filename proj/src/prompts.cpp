#include "chorus/prompts.hpp"

#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "chorus/errors.hpp"

namespace chorus {

namespace {

const std::map<std::string, std::string>& default_templates() {
    static const std::map<std::string, std::string> kTemplates = {
        {"route",
         "You are a model router. Select the best-fitting model for the task.\n"
         "Task: {query}\n"
         "Candidate models:\n{models}\n"
         "Answer with the model id only."},
        {"debate_initial", "Task: {query}\nGive your best answer."},
        {"debate_refine",
         "Task: {query}\n"
         "Your previous answer: {own_answer}\n"
         "Answers from other models:\n{other_answers}\n"
         "Consider the other answers and give your revised answer."},
        {"feedback_write",
         "Task: {query}\n"
         "Answer under review (from {author}): {answer}\n"
         "Write concise feedback on this answer."},
        {"feedback_refine",
         "Task: {query}\n"
         "Your previous answer: {own_answer}\n"
         "Feedback received:\n{feedback}\n"
         "Revise your answer using the feedback."},
        {"summarize",
         "Task: {query}\n"
         "Candidate answers:\n{answers}\n"
         "Summarize these into one final answer."},
        {"judge_pair",
         "Task: {query}\n"
         "Response A: {answer_a}\n"
         "Response B: {answer_b}\n"
         "Which response is better? Reply with A or B."},
        {"fuse",
         "Task: {query}\n"
         "Top-ranked responses:\n{answers}\n"
         "Fuse these responses into one final answer."},
        {"knowledge_generate",
         "Generate a short paragraph of knowledge relevant to the task.\nTask: {query}"},
        {"knowledge_answer",
         "Task: {query}\n"
         "Background knowledge:\n{knowledge}\n"
         "Answer the task using the knowledge above."},
        {"graph_node",
         "Task: {query}\n"
         "Upstream model outputs:\n{inputs}\n"
         "Produce your contribution."},
        {"structured_update",
         "Task: {query}\n"
         "Your previous answer: {own_answer}\n"
         "Neighbor answers:\n{neighbor_answers}\n"
         "Update your answer."},
        {"blackboard_turn",
         "Task: {query}\n"
         "Blackboard:\n{blackboard}\n"
         "Choose one action from {actions} and contribute.\n"
         "Reply as 'action: <name>' on the first line, then your content."},
        {"blackboard_vote",
         "Task: {query}\n"
         "Blackboard entries:\n{blackboard}\n"
         "Vote for the entry number with the best final conclusion. Reply with the number."},
        {"sparta_answer", "Instruction: {instruction}\nRespond to the instruction."},
        {"sparta_judge",
         "Instruction: {instruction}\n"
         "Response A: {answer_a}\n"
         "Response B: {answer_b}\n"
         "Which response fulfills the instruction better? Reply with A or B."},
        {"aggregate",
         "Task: {query}\n"
         "Model responses:\n{responses}\n"
         "Aggregate these responses into the best final answer."},
        {"select_models",
         "Task description: {task}\n"
         "Candidate models:\n{candidates}\n"
         "Select {m} models for collaboration. Reply with their ids."},
        {"judge_score",
         "Rate the response on a 1-10 scale.\n"
         "Task: {prompt}\n"
         "Response: {response}\n"
         "Reply with a number from 1 to 10."},
        {"switch_select",
         "Task: {query}\n"
         "Generated so far: {context}\n"
         "Patch index: {patch_index}\n"
         "Candidate models:\n{models}\n"
         "Which model should generate the next patch? Reply with the model id."},
        {"mentor_decide",
         "Task: {query}\n"
         "Generated so far: {context}\n"
         "The generator and mentor disagree on the next token.\n"
         "Reply 'generator' or 'mentor' to pick who writes the next patch."},
    };
    return kTemplates;
}

}  // namespace

const PromptLibrary& PromptLibrary::defaults() {
    static const PromptLibrary lib = [] {
        PromptLibrary l;
        l.templates_ = default_templates();
        return l;
    }();
    return lib;
}

PromptLibrary PromptLibrary::load_dir(const std::string& dir) {
    PromptLibrary lib = defaults();
    if (!std::filesystem::is_directory(dir)) {
        throw ConfigError("template directory '" + dir + "' does not exist");
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
        std::ifstream in(entry.path());
        std::ostringstream body;
        body << in.rdbuf();
        std::string text = body.str();
        // Files conventionally end with a trailing newline the template
        // itself should not carry.
        if (!text.empty() && text.back() == '\n') text.pop_back();
        lib.templates_[entry.path().stem().string()] = std::move(text);
    }
    return lib;
}

std::string PromptLibrary::render(const std::string& name,
                                  const std::map<std::string, std::string>& vars) const {
    const std::string& tpl = raw(name);
    std::string out;
    out.reserve(tpl.size());
    std::size_t i = 0;
    while (i < tpl.size()) {
        if (tpl[i] == '{') {
            std::size_t end = i + 1;
            while (end < tpl.size() &&
                   (std::islower(static_cast<unsigned char>(tpl[end])) || tpl[end] == '_')) {
                ++end;
            }
            if (end < tpl.size() && tpl[end] == '}' && end > i + 1) {
                const std::string key = tpl.substr(i + 1, end - i - 1);
                auto it = vars.find(key);
                if (it == vars.end()) {
                    throw ArgumentError("template '" + name + "' placeholder {" + key +
                                        "} has no value");
                }
                out += it->second;
                i = end + 1;
                continue;
            }
        }
        out += tpl[i++];
    }
    return out;
}

const std::string& PromptLibrary::raw(const std::string& name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw ArgumentError("no template named '" + name + "'");
    return it->second;
}

}  // namespace chorus
