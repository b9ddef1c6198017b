// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0
//
// Python bindings. Record collections cross the boundary as JSON text in the
// same schema the CLI writes; the package __init__ converts them to dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kbgate/boundary_dataset.hpp"
#include "kbgate/cli.hpp"
#include "kbgate/error.hpp"
#include "kbgate/evaluation.hpp"
#include "kbgate/gatekeeper.hpp"
#include "kbgate/sampling.hpp"
#include "kbgate/score.hpp"
#include "kbgate/text.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

kbgate::ScoreScale make_scale(double s_w, double s_c) {
    kbgate::ScoreScale scale{s_w, s_c};
    scale.validate();
    return scale;
}

std::vector<kbgate::JudgedQuery> judged_from(const std::string& text) {
    return json::parse(text).get<std::vector<kbgate::JudgedQuery>>();
}

std::vector<kbgate::ItemMetrics> items_from(const std::string& text) {
    return json::parse(text).get<std::vector<kbgate::ItemMetrics>>();
}

}  // namespace

PYBIND11_MODULE(_kbgate, m) {
    m.doc() = "Knowledge-boundary gating for multimodal retrieval";
    m.attr("__version__") = kbgate::kToolVersion;
    m.attr("DEFAULT_LABEL_EPSILON") = 4.0;
    m.attr("DEFAULT_SKB_EPSILON") = kbgate::kDefaultSkbEpsilon;

    static py::exception<kbgate::Error> base(m, "KbgateError");
    py::register_exception<kbgate::RangeError>(m, "RangeError", base.ptr());
    py::register_exception<kbgate::ValidationError>(m, "ValidationError", base.ptr());
    py::register_exception<kbgate::ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<kbgate::ParseError>(m, "ParseError", base.ptr());
    py::register_exception<kbgate::IntegrityError>(m, "IntegrityError", base.ptr());

    m.def(
        "flip_score", [](double s, double s_w, double s_c) { return kbgate::flip_score(s, make_scale(s_w, s_c)); },
        py::arg("score"), py::arg("s_w") = 1.0, py::arg("s_c") = 5.0);
    m.def(
        "hard_label",
        [](double s, double eps, double s_w, double s_c) { return kbgate::hard_label(s, eps, make_scale(s_w, s_c)); },
        py::arg("score"), py::arg("epsilon"), py::arg("s_w") = 1.0, py::arg("s_c") = 5.0,
        "True when the query needs search (score below epsilon).");
    m.def("soft_indicator", &kbgate::soft_indicator, py::arg("score"), py::arg("epsilon"));
    m.def("format_soft_target", &kbgate::format_soft_target, py::arg("soft"));
    m.def("parse_hard_verdict", [](const std::string& s) { return kbgate::parse_hard_verdict(s); }, py::arg("output"));
    m.def(
        "parse_soft_verdict",
        [](const std::string& s, double s_w, double s_c) { return kbgate::parse_soft_verdict(s, make_scale(s_w, s_c)); },
        py::arg("output"), py::arg("s_w") = 1.0, py::arg("s_c") = 5.0);

    m.def("normalize", [](const std::string& s) { return kbgate::text::normalize(s); }, py::arg("text"));
    m.def(
        "token_accuracy", [](const std::string& p, const std::string& g) { return kbgate::token_accuracy(p, g); },
        py::arg("prediction"), py::arg("gold"));
    m.def(
        "rescale_to_percent",
        [](double s, double s_w, double s_c) { return kbgate::rescale_to_percent(s, make_scale(s_w, s_c)); },
        py::arg("score"), py::arg("s_w") = 1.0, py::arg("s_c") = 5.0);
    m.def("parse_grid", [](const std::string& s) { return kbgate::parse_grid(s); }, py::arg("spec"));

    m.def(
        "_build_labels",
        [](const std::string& judged, double eps, double s_w, double s_c) {
            return json(kbgate::build_labels(judged_from(judged), eps, make_scale(s_w, s_c))).dump();
        },
        py::arg("judged_json"), py::arg("epsilon"), py::arg("s_w") = 1.0, py::arg("s_c") = 5.0);
    m.def(
        "_dataset_stats",
        [](const std::string& judged, const std::string& model) {
            json rows = json::array();
            for (const auto& s : kbgate::dataset_stats(judged_from(judged), model)) {
                rows.push_back({{"source", s.source}, {"model", s.model}, {"count", s.count}, {"mean", s.mean},
                                {"stddev", s.stddev}});
            }
            return rows.dump();
        },
        py::arg("judged_json"), py::arg("model") = "");
    m.def(
        "_stats_table",
        [](const std::string& judged, const std::string& model) {
            return kbgate::stats_table(kbgate::dataset_stats(judged_from(judged), model));
        },
        py::arg("judged_json"), py::arg("model") = "");
    m.def(
        "_epsilon_sweep",
        [](const std::vector<double>& grid, const std::map<std::string, std::optional<double>>& scores,
           const std::string& none, const std::string& all) {
            std::vector<py::tuple> out;
            const auto none_items = items_from(none);
            const auto all_items = items_from(all);
            for (const auto& r : kbgate::epsilon_sweep(grid, scores, none_items, all_items)) {
                out.push_back(py::make_tuple(r.epsilon, r.ratio, r.llm, r.token_acc));
            }
            return out;
        },
        py::arg("grid"), py::arg("soft_scores"), py::arg("none_json"), py::arg("all_json"));

    m.def(
        "run_cli",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "kbgate");
            py::gil_scoped_release release;
            return kbgate::run_cli(args);
        },
        py::arg("args"), "Runs the kbgate command line in-process and returns its exit code.");
}
