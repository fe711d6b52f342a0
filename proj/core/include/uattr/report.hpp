#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "uattr/counterfactual.hpp"

namespace uattr {

struct SeriesPoint {
    double x = 0.0;
    double y = 0.0;
    double yerr = 0.0;
};

struct Series {
    std::string name;
    std::vector<SeriesPoint> points;  // ascending x
};

// Self-contained SVG line chart with shaded standard-error bands and a
// legend. Pure text generation, deterministic for identical inputs.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series,
                           int width = 680, int height = 440);

struct MethodSummary {
    std::string method;
    std::size_t k = 0;
    std::size_t queries = 0;
    double mean_delta_loss = 0.0;
    double stderr_delta_loss = 0.0;
    double mean_delta_gen_mse = 0.0;
    double mean_delta_gen_feat = 0.0;
};

// Mean/std-error per (method, k) over all queries, sorted by method then k.
std::vector<MethodSummary> summarize_reports(const std::vector<CounterfactualReport>& reports);

// Emits report.md plus delta_loss_vs_k.svg and delta_gen_vs_k.svg into dir.
// The random curve contributes the reference band; header_lines go verbatim
// at the top of the markdown (provenance, dataset description, ...).
void write_report(const std::filesystem::path& dir,
                  const std::vector<CounterfactualReport>& reports,
                  const RandomReferenceCurve& random_curve,
                  const std::vector<std::string>& header_lines);

}  // namespace uattr
