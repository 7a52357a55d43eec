#include "bbh/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace bbh {

namespace {

std::string fixed6(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << v;
    return os.str();
}

// Plot geometry shared by both charts.
constexpr double kW = 640, kH = 420;
constexpr double kL = 70, kR = 20, kT = 20, kB = 50;

double sx(double x, double lo, double hi) {
    return kL + (x - lo) / (hi - lo) * (kW - kL - kR);
}

double sy(double y, double lo, double hi) {
    return kH - kB - (y - lo) / (hi - lo) * (kH - kT - kB);
}

std::string polyline(const std::vector<double>& xs, const std::vector<double>& ys, double xlo,
                     double xhi, double ylo, double yhi, const char* dash) {
    std::ostringstream os;
    os << "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"";
    if (dash[0]) os << " stroke-dasharray=\"" << dash << "\"";
    os << " points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) os << " ";
        os << std::setprecision(8) << sx(xs[i], xlo, xhi) << "," << sy(ys[i], ylo, yhi);
    }
    os << "\"/>\n";
    return os.str();
}

std::string chart_frame(const char* x_label, const char* y_label, double xlo, double xhi,
                        double ylo, double yhi) {
    std::ostringstream os;
    os << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << (kW - kL - kR)
       << "\" height=\"" << (kH - kT - kB)
       << "\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n";
    os << "<text x=\"" << (kL + (kW - kL - kR) / 2) << "\" y=\"" << (kH - 12)
       << "\" text-anchor=\"middle\" font-size=\"14\">" << x_label << "</text>\n";
    os << "<text x=\"18\" y=\"" << (kT + (kH - kT - kB) / 2)
       << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 18 "
       << (kT + (kH - kT - kB) / 2) << ")\">" << y_label << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xlo + (xhi - xlo) * i / 4.0;
        const double fy = ylo + (yhi - ylo) * i / 4.0;
        os << "<text x=\"" << sx(fx, xlo, xhi) << "\" y=\"" << (kH - kB + 18)
           << "\" text-anchor=\"middle\" font-size=\"11\">" << std::setprecision(3) << fx
           << "</text>\n";
        os << "<text x=\"" << (kL - 8) << "\" y=\"" << (sy(fy, ylo, yhi) + 4)
           << "\" text-anchor=\"end\" font-size=\"11\">" << std::setprecision(3) << fy
           << "</text>\n";
    }
    return os.str();
}

std::string svg_open() {
    return msg("<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"", kW,
               "\" height=\"", kH, "\" viewBox=\"0 0 ", kW, " ", kH, "\">\n");
}

}  // namespace

std::string metrics_csv(const MetricsRow& row) {
    std::string out = "method,error_pct,in_auc,outlier_auc,runtime_s,seed\n";
    out += row.method + "," + fixed6(row.error_pct) + "," + fixed6(row.in_auc) + "," +
           fixed6(row.outlier_auc) + "," + fixed6(row.runtime_s) + "," +
           std::to_string(row.seed) + "\n";
    return out;
}

std::string sweep_csv(const AdversarialSweep& sweep) {
    std::string out = "epsilon,accuracy,mean_entropy\n";
    for (std::size_t i = 0; i < sweep.epsilons.size(); ++i) {
        out += fixed6(sweep.epsilons[i]) + "," + fixed6(sweep.accuracy[i]) + "," +
               fixed6(sweep.mean_entropy[i]) + "\n";
    }
    return out;
}

std::string training_log_csv(const std::vector<StepRecord>& log) {
    std::string out = "step,nll,kl,anneal,loss\n";
    for (const StepRecord& r : log) {
        out += std::to_string(r.step) + "," + fixed6(r.nll) + "," + fixed6(r.kl) + "," +
               fixed6(r.anneal) + "," + fixed6(r.loss) + "\n";
    }
    return out;
}

std::string toy_predictive_csv(const std::vector<double>& xs, const RegressionPredictive& pred) {
    if (xs.size() != pred.mean.size() || xs.size() != pred.stdev.size()) {
        throw ContractError("toy_predictive_csv: misaligned series");
    }
    std::string out = "x,mean,std\n";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out += fixed6(xs[i]) + "," + fixed6(pred.mean[i]) + "," + fixed6(pred.stdev[i]) + "\n";
    }
    return out;
}

std::string histogram_csv(const WeightDiagnostics& diag) {
    std::string out = "weight,bin_lo,bin_hi,count\n";
    for (const WeightHistogram& h : diag.histograms) {
        const double width = (h.hi - h.lo) / double(h.counts.size());
        for (std::size_t b = 0; b < h.counts.size(); ++b) {
            out += h.label + "," + fixed6(h.lo + width * double(b)) + "," +
                   fixed6(h.lo + width * double(b + 1)) + "," + std::to_string(h.counts[b]) +
                   "\n";
        }
    }
    return out;
}

std::string correlation_csv(const WeightDiagnostics& diag) {
    const std::size_t k = diag.labels.size();
    std::string out = "weight";
    for (const std::string& l : diag.labels) out += "," + l;
    out += "\n";
    for (std::size_t a = 0; a < k; ++a) {
        out += diag.labels[a];
        for (std::size_t b = 0; b < k; ++b) out += "," + fixed6(diag.correlation[a * k + b]);
        out += "\n";
    }
    return out;
}

std::string sweep_svg(const AdversarialSweep& sweep) {
    if (sweep.epsilons.empty()) throw ContractError("sweep_svg: empty series");
    const double xlo = sweep.epsilons.front(), xhi = std::max(sweep.epsilons.back(), xlo + 1e-9);
    std::string out = svg_open();
    out += chart_frame("adversarial perturbation", "accuracy / normalized entropy", xlo, xhi,
                       0.0, 1.0);
    out += polyline(sweep.epsilons, sweep.accuracy, xlo, xhi, 0.0, 1.0, "");
    out += polyline(sweep.epsilons, sweep.mean_entropy, xlo, xhi, 0.0, 1.0, "6,4");
    out += "</svg>\n";
    return out;
}

std::string toy_svg(const std::vector<double>& xs, const RegressionPredictive& pred,
                    const std::vector<double>& train_x, const std::vector<double>& train_y) {
    if (xs.empty()) throw ContractError("toy_svg: empty series");
    const double xlo = xs.front(), xhi = xs.back();
    double ylo = 0.0, yhi = 0.0;
    std::vector<double> up(xs.size()), dn(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        up[i] = pred.mean[i] + 2.0 * pred.stdev[i];
        dn[i] = pred.mean[i] - 2.0 * pred.stdev[i];
        ylo = std::min(ylo, dn[i]);
        yhi = std::max(yhi, up[i]);
    }
    for (double y : train_y) {
        ylo = std::min(ylo, y);
        yhi = std::max(yhi, y);
    }
    if (ylo == yhi) yhi = ylo + 1.0;

    std::string out = svg_open();
    out += chart_frame("x", "prediction", xlo, xhi, ylo, yhi);
    out += polyline(xs, pred.mean, xlo, xhi, ylo, yhi, "");
    out += polyline(xs, up, xlo, xhi, ylo, yhi, "6,4");
    out += polyline(xs, dn, xlo, xhi, ylo, yhi, "6,4");
    for (std::size_t i = 0; i < train_x.size(); ++i) {
        out += msg("<circle cx=\"", sx(train_x[i], xlo, xhi), "\" cy=\"",
                   sy(train_y[i], ylo, yhi), "\" r=\"3\" fill=\"black\"/>\n");
    }
    out += "</svg>\n";
    return out;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(msg("cannot write '", path, "'"));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError(msg("short write to '", path, "'"));
}

void write_manifest(const std::string& path, const std::vector<std::string>& files) {
    std::string out;
    for (const std::string& f : files) out += f + "\n";
    write_text_file(path, out);
}

}  // namespace bbh
