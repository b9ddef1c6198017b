// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbgate/score.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cctype>

#include <fmt/format.h>

#include "kbgate/error.hpp"

namespace kbgate {

void ScoreScale::validate() const {
    if (!std::isfinite(wrong) || !std::isfinite(correct) || !(wrong < correct)) {
        throw RangeError(fmt::format("score scale needs s_w < s_c, got ({}, {})", wrong, correct));
    }
}

double ScoreScale::clamp(double s) const { return std::clamp(s, wrong, correct); }

namespace {

void require_in_scale(double v, const ScoreScale& scale, const char* what) {
    if (!std::isfinite(v) || !scale.contains(v)) {
        throw RangeError(fmt::format("{} = {} outside [{}, {}]", what, v, scale.wrong, scale.correct));
    }
}

}  // namespace

double flip_score(double s, const ScoreScale& scale) {
    scale.validate();
    require_in_scale(s, scale, "score");
    // Exact endpoints keep the involution exact at s_w and s_c.
    return scale.clamp(scale.wrong + scale.correct - s);
}

bool hard_label(double s, double epsilon, const ScoreScale& scale) {
    scale.validate();
    require_in_scale(s, scale, "score");
    require_in_scale(epsilon, scale, "epsilon");
    return s < epsilon;
}

std::optional<double> parse_first_number(std::string_view text) {
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(text[i]))) continue;
        std::size_t start = i;
        if (start > 0 && (text[start - 1] == '-' || text[start - 1] == '+')) --start;
        std::size_t end = i;
        while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
        if (end + 1 < text.size() && text[end] == '.' && std::isdigit(static_cast<unsigned char>(text[end + 1]))) {
            ++end;
            while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
        }
        std::size_t from = text[start] == '+' ? start + 1 : start;
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(text.data() + from, text.data() + end, value);
        if (ec == std::errc{} && std::isfinite(value)) return value;
        return std::nullopt;
    }
    return std::nullopt;
}

}  // namespace kbgate
