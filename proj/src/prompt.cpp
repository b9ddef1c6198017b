// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbgate/prompt.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "kbgate/digest.hpp"
#include "kbgate/error.hpp"
#include "kbgate/text.hpp"

namespace kbgate {

using nlohmann::json;

namespace {

constexpr std::string_view kBoundaryPreamble =
    "You are an assistant capable of deciding whether a search is needed in a multimodal question-answering "
    "scenario. Below, I will provide you with a multimodal question that includes a text question and an image "
    "link.\n";

const std::string kHardBody = std::string(kBoundaryPreamble) +
    "Please respond with \"true\" or \"false,\" indicating whether a search is necessary (true) or not (false) "
    "to answer this multimodal question.\n"
    "{ST_1}\n"
    "Text question: {question}\n"
    "{IMAGE_TAG}: {image}\n"
    "{ST_2}";

const std::string kSoftBody = std::string(kBoundaryPreamble) +
    "Please respond with a score ranging from 1.0 to 5.0 indicating whether a search is necessary or not to "
    "answer this multimodal question.\n"
    "\n"
    "Follow these guidelines for scoring:\n"
    "- Your score has to be between 1.0 and 5.0, where 1.0 stands for an unnecessary search and 5.0 stands for "
    "a necessary search.\n"
    "- The score does not have to be integer.\n"
    "Example Response:\n"
    "4.0\n"
    "\n"
    "{ST_1}\n"
    "Text question: {question}\n"
    "{IMAGE_TAG}: {image}\n"
    "{ST_2}\n"
    "Your score:";

const std::string kJudgeBody =
    "You are an expert evaluation system for a question answering chatbot.\n"
    "You are given a user question, a reference answer, and a generated answer.\n"
    "Judge the correctness of the generated answer against the reference answer and rate it with a single "
    "score between 1 and 5, where 1 means the generated answer is wrong and 5 means it is fully correct.\n"
    "Output the score alone on the first line.\n"
    "\n"
    "User Question:\n"
    "{question}\n"
    "\n"
    "Reference Answer:\n"
    "{gold}\n"
    "\n"
    "Generated Answer:\n"
    "{prediction}\n";

const std::string kPromptBaselineBody =
    "Before answering, decide whether you need to search the web for external information to answer the "
    "multimodal question below correctly. Respond with \"true\" if a search is necessary, or \"false\" if you "
    "can answer it from the image and your own knowledge. Respond with \"true\" or \"false\" only.\n"
    "{ST_1}\n"
    "Text question: {question}\n"
    "{IMAGE_TAG}: {image}\n"
    "{ST_2}";

const std::string kAnswerBody =
    "{ST_1}\n"
    "{IMAGE_TAG}: {image}\n"
    "Question: {question}\n"
    "Answer the question concisely.\n"
    "{ST_2}";

const std::string kAnswerWithContextBody =
    "{ST_1}\n"
    "{IMAGE_TAG}: {image}\n"
    "{context}\n"
    "Use the search results above when they are relevant and answer the question concisely.\n"
    "Question: {question}\n"
    "{ST_2}";

const std::set<std::string, std::less<>> kDialectTokens = {"ST_1", "ST_2", "IMAGE_TAG"};
const std::set<std::string, std::less<>> kContentSlots = {"question", "image", "prediction", "gold", "context"};

std::vector<std::string> required_slots(TemplateVariant v) {
    switch (v) {
        case TemplateVariant::Hard:
        case TemplateVariant::Soft:
        case TemplateVariant::PromptBaseline:
        case TemplateVariant::Answer: return {"question", "image"};
        case TemplateVariant::Judge: return {"question", "prediction", "gold"};
        case TemplateVariant::AnswerWithContext: return {"question", "image", "context"};
    }
    return {};
}

struct Piece {
    bool placeholder = false;
    std::string value;
};

std::vector<Piece> tokenize(std::string_view body) {
    std::vector<Piece> out;
    std::string literal;
    for (std::size_t i = 0; i < body.size(); ++i) {
        char c = body[i];
        if (c == '{' && i + 1 < body.size() && body[i + 1] == '{') {
            literal.push_back('{');
            ++i;
        } else if (c == '}' && i + 1 < body.size() && body[i + 1] == '}') {
            literal.push_back('}');
            ++i;
        } else if (c == '{') {
            auto close = body.find('}', i + 1);
            if (close == std::string_view::npos) throw ConfigError("unterminated placeholder in template");
            if (!literal.empty()) out.push_back({false, std::move(literal)});
            literal.clear();
            out.push_back({true, std::string(body.substr(i + 1, close - i - 1))});
            i = close;
        } else {
            literal.push_back(c);
        }
    }
    if (!literal.empty()) out.push_back({false, std::move(literal)});
    return out;
}

void append_text(RenderedMessage& msg, std::string_view text) {
    if (text.empty()) return;
    if (!msg.segments.empty() && msg.segments.back().kind == Segment::Kind::Text) {
        msg.segments.back().text += text;
    } else {
        msg.segments.push_back(Segment{Segment::Kind::Text, std::string(text), {}});
    }
}

}  // namespace

std::string_view to_string(TemplateVariant v) {
    switch (v) {
        case TemplateVariant::Hard: return "hard";
        case TemplateVariant::Soft: return "soft";
        case TemplateVariant::Judge: return "judge";
        case TemplateVariant::PromptBaseline: return "prompt-baseline";
        case TemplateVariant::Answer: return "answer";
        case TemplateVariant::AnswerWithContext: return "answer-rag";
    }
    return "?";
}

TemplateVariant parse_template_variant(std::string_view s) {
    for (auto v : {TemplateVariant::Hard, TemplateVariant::Soft, TemplateVariant::Judge,
                   TemplateVariant::PromptBaseline, TemplateVariant::Answer, TemplateVariant::AnswerWithContext}) {
        if (to_string(v) == s) return v;
    }
    throw ConfigError(fmt::format("unknown template variant '{}'", s));
}

bool RenderedMessage::empty() const {
    return std::all_of(segments.begin(), segments.end(),
                       [](const Segment& s) { return s.kind == Segment::Kind::Text && s.text.empty(); });
}

std::string RenderedMessage::flatten() const {
    std::string out;
    for (const auto& s : segments) out += s.text;
    return out;
}

std::vector<ImageRef> RenderedMessage::images() const {
    std::vector<ImageRef> out;
    for (const auto& s : segments) {
        if (s.kind == Segment::Kind::Image) out.push_back(s.image);
    }
    return out;
}

void PromptTemplate::validate() const {
    std::set<std::string, std::less<>> seen;
    for (const auto& piece : tokenize(body)) {
        if (!piece.placeholder) continue;
        if (!kDialectTokens.contains(piece.value) && !kContentSlots.contains(piece.value)) {
            throw ConfigError(fmt::format("{} template: unknown placeholder {{{}}}", to_string(variant), piece.value));
        }
        if (!seen.insert(piece.value).second) {
            throw ConfigError(fmt::format("{} template: placeholder {{{}}} appears more than once", to_string(variant),
                                          piece.value));
        }
    }
    for (const auto& slot : required_slots(variant)) {
        if (!seen.contains(slot)) {
            throw ConfigError(fmt::format("{} template: missing placeholder {{{}}}", to_string(variant), slot));
        }
    }
}

std::string PromptTemplate::hash() const {
    json j{{"variant", to_string(variant)},
           {"body", body},
           {"dialect",
            {{"name", dialect.name},
             {"start", dialect.start_token},
             {"end", dialect.end_token},
             {"image_tag", dialect.image_tag},
             {"image_text", dialect.image_text}}}};
    return sha256_hex(j.dump());
}

RenderedMessage render(const PromptTemplate& tpl, const PromptFields& fields) {
    tpl.validate();
    RenderedMessage msg;
    for (const auto& piece : tokenize(tpl.body)) {
        if (!piece.placeholder) {
            append_text(msg, piece.value);
            continue;
        }
        const std::string& name = piece.value;
        if (name == "ST_1") {
            append_text(msg, tpl.dialect.start_token);
        } else if (name == "ST_2") {
            append_text(msg, tpl.dialect.end_token);
        } else if (name == "IMAGE_TAG") {
            append_text(msg, tpl.dialect.image_tag);
        } else if (name == "question") {
            append_text(msg, fields.question);
        } else if (name == "prediction") {
            append_text(msg, fields.prediction);
        } else if (name == "gold") {
            append_text(msg, fields.gold);
        } else if (name == "context") {
            append_text(msg, fields.context);
        } else if (name == "image") {
            for (std::size_t i = 0; i < fields.images.size(); ++i) {
                if (i > 0) append_text(msg, " ");
                const auto& img = fields.images[i];
                msg.segments.push_back(
                    Segment{Segment::Kind::Image, text::replace_all(tpl.dialect.image_text, "{ref}", img.display()), img});
            }
        }
    }
    return msg;
}

RenderedMessage render_prompt(const PromptTemplate& tpl, const QueryRecord& query) {
    if (!query.has_content()) throw ValidationError(fmt::format("query {} has neither text nor images", query.id));
    PromptFields fields;
    fields.question = query.text;
    fields.images = query.images;
    return render(tpl, fields);
}

std::string_view default_template_body(TemplateVariant v) {
    switch (v) {
        case TemplateVariant::Hard: return kHardBody;
        case TemplateVariant::Soft: return kSoftBody;
        case TemplateVariant::Judge: return kJudgeBody;
        case TemplateVariant::PromptBaseline: return kPromptBaselineBody;
        case TemplateVariant::Answer: return kAnswerBody;
        case TemplateVariant::AnswerWithContext: return kAnswerWithContextBody;
    }
    return {};
}

std::map<std::string, Dialect> builtin_dialects() {
    std::map<std::string, Dialect> out;
    out["plain"] = Dialect{};
    out["qwen-vl"] = Dialect{"qwen-vl", "<|im_start|>user", "<|im_end|>\n<|im_start|>assistant", "<Image>",
                             "<img>{ref}</img>"};
    out["deepseek-vl"] = Dialect{"deepseek-vl", "User:", "Assistant:", "<Image>", "<image_placeholder>"};
    return out;
}

TemplateSet::TemplateSet() {
    for (auto v : {TemplateVariant::Hard, TemplateVariant::Soft, TemplateVariant::Judge,
                   TemplateVariant::PromptBaseline, TemplateVariant::Answer, TemplateVariant::AnswerWithContext}) {
        bodies_[{v, "*"}] = std::string(default_template_body(v));
    }
    for (auto& [name, d] : builtin_dialects()) dialects_.emplace(name, d);
}

TemplateSet TemplateSet::from_json(const json& config) {
    TemplateSet set;
    if (config.contains("dialects")) {
        for (const auto& [name, d] : config.at("dialects").items()) {
            Dialect dialect;
            dialect.name = name;
            dialect.start_token = d.value("start_token", "");
            dialect.end_token = d.value("end_token", "");
            dialect.image_tag = d.value("image_tag", "<Image>");
            dialect.image_text = d.value("image_text", "<image>");
            set.add_dialect(std::move(dialect));
        }
    }
    if (config.contains("templates")) {
        for (const auto& [variant, value] : config.at("templates").items()) {
            auto v = parse_template_variant(variant);
            if (value.is_string()) {
                set.set_body(v, value.get<std::string>());
            } else if (value.is_object()) {
                for (const auto& [dialect, body] : value.items()) set.set_body(v, body.get<std::string>(), dialect);
            } else {
                throw ConfigError(fmt::format("template '{}' must be a string or an object", variant));
            }
        }
    }
    return set;
}

void TemplateSet::set_body(TemplateVariant v, std::string body, std::string dialect) {
    PromptTemplate probe{v, body, Dialect{}};
    probe.validate();
    bodies_[{v, std::move(dialect)}] = std::move(body);
}

void TemplateSet::add_dialect(Dialect d) {
    auto name = d.name;
    dialects_.insert_or_assign(std::move(name), std::move(d));
}

const Dialect& TemplateSet::dialect(std::string_view name) const {
    auto it = dialects_.find(name);
    if (it == dialects_.end()) throw ConfigError(fmt::format("unknown prompt dialect '{}'", name));
    return it->second;
}

PromptTemplate TemplateSet::get(TemplateVariant v, std::string_view dialect_name) const {
    const Dialect& d = dialect(dialect_name);
    auto it = bodies_.find({v, std::string(dialect_name)});
    if (it == bodies_.end()) it = bodies_.find({v, "*"});
    return PromptTemplate{v, it->second, d};
}

json TemplateSet::hashes(std::string_view dialect_name) const {
    json out = json::object();
    for (auto v : {TemplateVariant::Hard, TemplateVariant::Soft, TemplateVariant::Judge,
                   TemplateVariant::PromptBaseline, TemplateVariant::Answer, TemplateVariant::AnswerWithContext}) {
        out[fmt::format("{}@{}", to_string(v), dialect_name)] = get(v, dialect_name).hash();
    }
    return out;
}

}  // namespace kbgate
