#include "csra/report.hpp"

#include <cmath>
#include <limits>

#include "csra/error.hpp"

namespace csra::report {

MeanStd mean_std(const std::vector<std::optional<double>>& values) {
    std::vector<double> present;
    for (const auto& v : values)
        if (v && std::isfinite(*v)) present.push_back(*v);
    return mean_std(present);
}

MeanStd mean_std(const std::vector<double>& values) {
    MeanStd r;
    r.n = values.size();
    if (values.empty()) {
        r.mean = r.stddev = std::numeric_limits<double>::quiet_NaN();
        return r;
    }
    for (double v : values) r.mean += v;
    r.mean /= static_cast<double>(r.n);
    if (r.n > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - r.mean) * (v - r.mean);
        r.stddev = std::sqrt(ss / static_cast<double>(r.n - 1));
    }
    return r;
}

ControllerSummary summarize_controller(Augmentor& augmentor, const WindowSet& windows) {
    if (windows.size() == 0) throw DataError("controller summary: no windows");
    const int s_count = augmentor.schema().system_count();
    const int k_count = augmentor.band_count();
    ControllerSummary out;
    out.mean_u = Mat::Zero(s_count, k_count);
    for (const auto& sys : augmentor.schema().systems()) out.system_ids.push_back(sys.id);
    out.band_labels = k_count == 3 ? std::vector<std::string>{"low", "mid", "high"} : std::vector<std::string>{"all"};

    constexpr Eigen::Index chunk = 512;
    const int w = windows.window;
    for (Eigen::Index start = 0; start < windows.size(); start += chunk) {
        const Eigen::Index n = std::min(chunk, windows.size() - start);
        const auto diags = augmentor.diagnose(windows.x.middleRows(start * w, n * w));
        for (const auto& sample : diags) {
            Mat u(s_count, k_count);
            for (int s = 0; s < s_count; ++s) u.row(s) = sample[static_cast<std::size_t>(s)].u.transpose();
            out.mean_u += u;
            out.u.push_back(std::move(u));
        }
    }
    out.mean_u /= static_cast<double>(out.u.size());
    for (int s = 0; s < s_count; ++s) out.system_mean.push_back(out.mean_u.row(s).mean());
    return out;
}

}  // namespace csra::report
