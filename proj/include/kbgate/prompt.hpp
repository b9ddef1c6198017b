// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0
//
// Prompt templates with named placeholders.
//
// Placeholders are written `{name}`; `{{` and `}}` produce literal braces.
// Dialect tokens: {ST_1} {ST_2} {IMAGE_TAG}. Content slots: {question}
// {image} {prediction} {gold} {context}. Each placeholder may appear at most
// once and every required slot of a variant must be present.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kbgate/query.hpp"

namespace kbgate {

enum class TemplateVariant { Hard, Soft, Judge, PromptBaseline, Answer, AnswerWithContext };

std::string_view to_string(TemplateVariant v);
TemplateVariant parse_template_variant(std::string_view s);

/// How a serving stack marks the user turn and images.
struct Dialect {
    std::string name = "plain";
    std::string start_token;        // {ST_1}
    std::string end_token;          // {ST_2}
    std::string image_tag = "<Image>";
    /// Text standing in for one image when a prompt is flattened to a
    /// string; `{ref}` expands to ImageRef::display().
    std::string image_text = "<image>";
};

struct Segment {
    enum class Kind { Text, Image };
    Kind kind = Kind::Text;
    /// For text segments the text; for image segments the flattened stand-in.
    std::string text;
    ImageRef image;

    friend bool operator==(const Segment&, const Segment&) = default;
};

/// A rendered message: text and image segments in reading order.
struct RenderedMessage {
    std::vector<Segment> segments;

    bool empty() const;
    /// Concatenation of every segment's text (images as their stand-ins).
    std::string flatten() const;
    std::vector<ImageRef> images() const;

    friend bool operator==(const RenderedMessage&, const RenderedMessage&) = default;
};

/// Values for a template's content slots.
struct PromptFields {
    std::string question;
    std::vector<ImageRef> images;
    std::string prediction;
    std::string gold;
    std::string context;
};

struct PromptTemplate {
    TemplateVariant variant = TemplateVariant::Hard;
    std::string body;
    Dialect dialect;

    /// Throws ConfigError on unknown or repeated placeholders, or a missing
    /// required slot.
    void validate() const;
    /// SHA-256 over variant, body and dialect tokens.
    std::string hash() const;
};

/// Substitutes the fields into the template. Pure.
RenderedMessage render(const PromptTemplate& tpl, const PromptFields& fields);

/// Renders a hard/soft/prompt-baseline/answer template for a query.
/// Throws ValidationError if the query has neither text nor images.
RenderedMessage render_prompt(const PromptTemplate& tpl, const QueryRecord& query);

/// Built-in template bodies (dialect-independent).
std::string_view default_template_body(TemplateVariant v);
/// Built-in dialects: plain, qwen-vl, deepseek-vl.
std::map<std::string, Dialect> builtin_dialects();

/// Template bodies keyed by variant with optional per-dialect overrides.
class TemplateSet {
public:
    TemplateSet();

    /// Config layout: {"templates": {"hard": "<body>" | {"*": "<body>",
    /// "<dialect>": "<body>"}}, "dialects": {"<name>": {...}}}.
    static TemplateSet from_json(const nlohmann::json& config);

    void set_body(TemplateVariant v, std::string body, std::string dialect = "*");
    void add_dialect(Dialect d);

    const Dialect& dialect(std::string_view name) const;
    PromptTemplate get(TemplateVariant v, std::string_view dialect = "plain") const;

    /// {"hard@plain": "<sha256>", ...} for every variant under `dialect`.
    nlohmann::json hashes(std::string_view dialect) const;

private:
    std::map<std::pair<TemplateVariant, std::string>, std::string> bodies_;
    std::map<std::string, Dialect, std::less<>> dialects_;
};

}  // namespace kbgate
