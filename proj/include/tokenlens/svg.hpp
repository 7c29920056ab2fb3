// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace tlens {

struct SvgSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Small static line plot (one per experiment curve). Output bytes are
// deterministic for identical inputs.
std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<SvgSeries>& series);

}  // namespace tlens
