#include <cstdio>

#include "trifuse/common.hpp"
#include "trifuse/metrics.hpp"

namespace trifuse {

void MetricReport::add(const std::string& image, const std::map<std::string, double>& values) {
    for (const std::string& name : metric_names)
        require(values.count(name) == 1, "report: missing metric " + name + " for " + image);
    rows.emplace_back(image, values);
}

void MetricReport::finalize() {
    image_count = static_cast<int>(rows.size());
    means.clear();
    if (rows.empty()) return;
    for (const std::string& name : metric_names) {
        double sum = 0.0;
        for (const auto& [image, values] : rows) sum += values.at(name);
        means[name] = sum / image_count;
    }
}

std::string report_to_csv(const MetricReport& report) {
    std::string out = "image";
    for (const std::string& name : report.metric_names) out += "," + name;
    out += "\n";
    char buf[64];
    for (const auto& [image, values] : report.rows) {
        out += image;
        for (const std::string& name : report.metric_names) {
            std::snprintf(buf, sizeof(buf), ",%.6f", values.at(name));
            out += buf;
        }
        out += "\n";
    }
    if (!report.rows.empty()) {
        out += "MEAN";
        for (const std::string& name : report.metric_names) {
            std::snprintf(buf, sizeof(buf), ",%.6f", report.means.at(name));
            out += buf;
        }
        out += "\n";
    }
    return out;
}

}  // namespace trifuse
