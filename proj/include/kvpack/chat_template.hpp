// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "kvpack/config.hpp"
#include "kvpack/error.hpp"
#include "kvpack/tokenizer.hpp"

namespace kvpack {

struct Message {
    std::string role;  // system | user | assistant
    std::string text;
};

enum class Role : std::uint8_t { System = 0, User = 1, Assistant = 2 };

inline Role parse_role(std::string_view role) {
    if (role == "system") return Role::System;
    if (role == "user") return Role::User;
    if (role == "assistant") return Role::Assistant;
    throw TemplateError("unknown role '" + std::string(role) + "'");
}

inline constexpr std::size_t kDialectIdWidth = 16;

/// A chat-template dialect. Rendering is a pure function of (messages, dialect).
struct ChatTemplate {
    struct Frame {
        std::string begin;
        std::string end;
        friend bool operator==(const Frame&, const Frame&) = default;
    };

    std::string id;
    std::vector<std::string> specials;
    std::string bos;       // emitted at the start of every render call when non-empty
    std::string preamble;  // auto-injected into the leading system message when non-empty
    std::array<Frame, 3> frames;
    std::string generation_prompt;

    friend bool operator==(const ChatTemplate&, const ChatTemplate&) = default;

    const Frame& frame(Role r) const { return frames[static_cast<std::size_t>(r)]; }
    bool auto_preamble() const noexcept { return !preamble.empty(); }
};

struct RenderOptions {
    bool single_pass = true;
    bool add_generation_prompt = false;
};

/// Byte range of one input message's frame (header through footer).
struct MessageSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
};

struct RenderedConversation {
    std::string text;
    std::vector<MessageSpan> spans;  // one per input message
};

namespace detail {

inline void render_one_call(std::span<const Message> messages, const ChatTemplate& t, RenderedConversation& out) {
    out.text += t.bos;
    const bool opens_with_system = !messages.empty() && parse_role(messages.front().role) == Role::System;
    if (t.auto_preamble() && !opens_with_system) {
        const auto& f = t.frame(Role::System);
        out.text += f.begin + t.preamble + f.end;
    }
    for (std::size_t i = 0; i < messages.size(); ++i) {
        const Role role = parse_role(messages[i].role);
        const auto& f = t.frame(role);
        MessageSpan span{out.text.size(), 0};
        out.text += f.begin;
        if (i == 0 && role == Role::System) out.text += t.preamble;
        out.text += messages[i].text;
        out.text += f.end;
        span.end = out.text.size();
        out.spans.push_back(span);
    }
}

}  // namespace detail

/// single_pass = false renders each message in its own call and concatenates the
/// results, which reproduces the duplicated begin-of-text / system-header
/// artifacts of dialects with a bos token or an auto preamble.
inline RenderedConversation render_conversation(std::span<const Message> messages, const ChatTemplate& t,
                                                RenderOptions opts = {}) {
    RenderedConversation out;
    if (opts.single_pass || messages.empty()) {
        detail::render_one_call(messages, t, out);
    } else {
        for (std::size_t i = 0; i < messages.size(); ++i) detail::render_one_call(messages.subspan(i, 1), t, out);
    }
    if (opts.add_generation_prompt) out.text += t.generation_prompt;
    return out;
}

inline std::string apply_template(std::span<const Message> messages, const ChatTemplate& t, bool single_pass,
                                  bool add_generation_prompt = false) {
    return render_conversation(messages, t, {single_pass, add_generation_prompt}).text;
}

namespace detail {

inline std::string unescape(std::string_view v, std::size_t line_no) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] != '\\') {
            out.push_back(v[i]);
            continue;
        }
        if (++i == v.size()) throw TemplateError("line " + std::to_string(line_no) + ": dangling backslash");
        switch (v[i]) {
            case 'n': out.push_back('\n'); break;
            case 't': out.push_back('\t'); break;
            case 's': out.push_back(' '); break;
            case '\\': out.push_back('\\'); break;
            default:
                throw TemplateError("line " + std::to_string(line_no) + ": unknown escape '\\" +
                                    std::string(1, v[i]) + "'");
        }
    }
    return out;
}

}  // namespace detail

/// Parses a dialect definition: `key = value` lines, `#` comments, escapes
/// \n \t \s \\ in values. `special` may repeat.
inline ChatTemplate parse_template_definition(std::string_view text) {
    ChatTemplate t;
    std::array<bool, 3> have_begin{}, have_end{};
    bool have_generation = false;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto s = detail::trim(line);
        if (s.empty() || s.front() == '#') continue;
        const auto eq = s.find('=');
        if (eq == std::string_view::npos) throw TemplateError("line " + std::to_string(line_no) + ": expected key = value");
        const auto key = detail::trim(s.substr(0, eq));
        const auto value = detail::unescape(detail::trim(s.substr(eq + 1)), line_no);

        if (key == "dialect") {
            t.id = value;
        } else if (key == "special") {
            if (value.empty()) throw TemplateError("line " + std::to_string(line_no) + ": empty special");
            t.specials.push_back(value);
        } else if (key == "bos") {
            t.bos = value;
        } else if (key == "preamble") {
            t.preamble = value;
        } else if (key == "generation") {
            t.generation_prompt = value;
            have_generation = true;
        } else if (const auto dot = key.find('.'); dot != std::string_view::npos) {
            const Role role = parse_role(key.substr(0, dot));
            const auto part = key.substr(dot + 1);
            auto& f = t.frames[static_cast<std::size_t>(role)];
            if (part == "begin") {
                f.begin = value;
                have_begin[static_cast<std::size_t>(role)] = true;
            } else if (part == "end") {
                f.end = value;
                have_end[static_cast<std::size_t>(role)] = true;
            } else {
                throw TemplateError("line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
            }
        } else {
            throw TemplateError("line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
        }
    }
    if (t.id.empty()) throw TemplateError("dialect id missing");
    if (t.id.size() > kDialectIdWidth) throw TemplateError("dialect id longer than 16 bytes: " + t.id);
    for (std::size_t r = 0; r < 3; ++r) {
        if (!have_begin[r] || !have_end[r]) throw TemplateError("dialect '" + t.id + "' is missing a role frame");
    }
    if (!have_generation) throw TemplateError("dialect '" + t.id + "' is missing the generation prompt");
    return t;
}

inline ChatTemplate load_template_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open template definition '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_template_definition(ss.str());
}

// Mirrors templates/chatml.tmpl and templates/llama3.tmpl.
inline constexpr std::string_view kChatmlDefinition = R"(dialect = chatml
special = <|im_start|>
special = <|im_end|>
bos =
preamble =
system.begin = <|im_start|>system\n
system.end = <|im_end|>\n
user.begin = <|im_start|>user\n
user.end = <|im_end|>\n
assistant.begin = <|im_start|>assistant\n
assistant.end = <|im_end|>\n
generation = <|im_start|>assistant\n
)";

inline constexpr std::string_view kLlama3Definition = R"(dialect = llama3
special = <|begin_of_text|>
special = <|start_header_id|>
special = <|end_header_id|>
special = <|eot_id|>
bos = <|begin_of_text|>
preamble = Cutting Knowledge Date: December 2023\nToday Date: 26 Jul 2024\n\n
system.begin = <|start_header_id|>system<|end_header_id|>\n\n
system.end = <|eot_id|>
user.begin = <|start_header_id|>user<|end_header_id|>\n\n
user.end = <|eot_id|>
assistant.begin = <|start_header_id|>assistant<|end_header_id|>\n\n
assistant.end = <|eot_id|>
generation = <|start_header_id|>assistant<|end_header_id|>\n\n
)";

/// Registered dialects plus the tokenizer whose special ids they share.
class TemplateSet {
public:
    static TemplateSet builtin() {
        TemplateSet set;
        set.add(parse_template_definition(kChatmlDefinition));
        set.add(parse_template_definition(kLlama3Definition));
        return set;
    }

    TemplateSet() { tokenizer_.add_special(std::string(kEndOfText)); }

    void add(ChatTemplate t) {
        for (const auto& s : t.specials) tokenizer_.add_special(s);
        dialects_[t.id] = std::move(t);
    }

    const ChatTemplate& get(std::string_view id) const {
        const auto it = dialects_.find(std::string(id));
        if (it == dialects_.end()) throw TemplateError("unknown dialect '" + std::string(id) + "'");
        return it->second;
    }

    bool contains(std::string_view id) const { return dialects_.contains(std::string(id)); }
    const Tokenizer& tokenizer() const noexcept { return tokenizer_; }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        for (const auto& [k, _] : dialects_) out.push_back(k);
        return out;
    }

private:
    std::map<std::string, ChatTemplate> dialects_;
    Tokenizer tokenizer_;
};

}  // namespace kvpack
