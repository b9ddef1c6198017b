// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string_view>

namespace kbgate {

/// Judge rubric endpoints: `wrong` is the score of a wrong answer, `correct`
/// of a fully correct one. Mean scores, soft labels and soft boundary
/// outputs all live on this interval.
struct ScoreScale {
    double wrong = 1.0;
    double correct = 5.0;

    void validate() const;
    bool contains(double s) const { return s >= wrong && s <= correct; }
    double clamp(double s) const;
    double width() const { return correct - wrong; }
};

/// s' = s_w + s_c - s. Maps answer quality onto search need.
double flip_score(double s, const ScoreScale& scale);

/// True when the query lies outside the knowledge boundary (search needed),
/// i.e. s < epsilon. A tie s == epsilon counts as inside.
bool hard_label(double s, double epsilon, const ScoreScale& scale);

/// First decimal number (optionally signed) appearing in `text`.
std::optional<double> parse_first_number(std::string_view text);

}  // namespace kbgate
