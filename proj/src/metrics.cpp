#include "tgvunet/metrics.hpp"

#include <cstdio>
#include <map>
#include <sstream>

namespace tgvunet {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

Tensor binarize(const Tensor& prob, double threshold) {
  if (!(threshold >= 0 && threshold <= 1)) throw ConfigError("threshold must be in [0, 1]");
  Tensor out(prob.shape());
  for (std::size_t i = 0; i < prob.size(); ++i) out[i] = prob[i] >= threshold ? 1.0 : 0.0;
  return out;
}

ConfusionCounts confusion(const Tensor& pred_prob, const Tensor& target, double threshold) {
  require_same_shape(pred_prob.shape(), target.shape(), "confusion");
  if (!(threshold >= 0 && threshold <= 1)) throw ConfigError("threshold must be in [0, 1]");
  ConfusionCounts c;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const bool p = pred_prob[i] >= threshold, t = target[i] >= 0.5;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double dice(const Tensor& pred_mask, const Tensor& target_mask) {
  require_same_shape(pred_mask.shape(), target_mask.shape(), "dice");
  double inter = 0, r = 0, t = 0;
  for (std::size_t i = 0; i < pred_mask.size(); ++i) {
    const bool p = pred_mask[i] >= 0.5, g = target_mask[i] >= 0.5;
    inter += p && g;
    r += p;
    t += g;
  }
  return r + t == 0 ? 1.0 : 2 * inter / (r + t);
}

MetricsReport compute_metrics(const ConfusionCounts& c) {
  MetricsReport m;
  m.counts = c;
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn),
               tn = static_cast<double>(c.tn);
  m.accuracy = c.total() == 0 ? 1.0 : (tp + tn) / (tp + fp + fn + tn);
  m.precision = c.tp + c.fp == 0 ? (c.fn == 0 ? 1.0 : 0.0) : tp / (tp + fp);
  m.recall = c.tp + c.fn == 0 ? (c.fp == 0 ? 1.0 : 0.0) : tp / (tp + fn);
  m.f1 = m.precision + m.recall == 0 ? 0.0 : 2 * m.precision * m.recall / (m.precision + m.recall);
  m.jaccard = c.tp + c.fp + c.fn == 0 ? 1.0 : tp / (tp + fp + fn);
  m.dsc = c.tp + c.fp + c.fn == 0 ? 1.0 : 2 * tp / (2 * tp + fp + fn);
  return m;
}

MetricsReport compute_metrics(const ConfusionCounts& c, const Tensor& pred_mask, const Tensor& target_mask) {
  MetricsReport m = compute_metrics(c);
  m.dsc = dice(pred_mask, target_mask);
  return m;
}

std::size_t false_positive_components(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred.shape(), target.shape(), "false_positive_components");
  const Shape& s = pred.shape();
  std::size_t found = 0;
  std::vector<char> seen(pred.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t plane = 0; plane < s.n * s.c; ++plane) {
    const std::size_t base = plane * s.plane();
    for (std::size_t start = 0; start < s.plane(); ++start) {
      if (seen[base + start] || pred[base + start] < 0.5) continue;
      bool touches = false;
      stack.assign(1, start);
      seen[base + start] = 1;
      while (!stack.empty()) {
        const std::size_t k = stack.back();
        stack.pop_back();
        if (target[base + k] >= 0.5) touches = true;
        const long y = static_cast<long>(k / s.w), x = static_cast<long>(k % s.w);
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            const long ny = y + dy, nx = x + dx;
            if (ny < 0 || nx < 0 || ny >= static_cast<long>(s.h) || nx >= static_cast<long>(s.w)) continue;
            const std::size_t nk = static_cast<std::size_t>(ny) * s.w + static_cast<std::size_t>(nx);
            if (seen[base + nk] || pred[base + nk] < 0.5) continue;
            seen[base + nk] = 1;
            stack.push_back(nk);
          }
      }
      if (!touches) ++found;
    }
  }
  return found;
}

double fp_per_volume(const std::vector<SliceMasks>& slices) {
  if (slices.empty()) throw Error("fp_per_volume: no slices");
  std::map<std::string, std::size_t> per_volume;
  for (const SliceMasks& s : slices) per_volume[s.volume_id] += false_positive_components(s.pred, s.target);
  double total = 0;
  for (const auto& [vol, n] : per_volume) total += static_cast<double>(n);
  return total / static_cast<double>(per_volume.size());
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  out << "dataset,combo,threshold,tp,fp,fn,tn,accuracy,precision,recall,f1,jaccard,dsc,fp_per_volume\n";
  char buf[512];
  for (const MetricsRow& r : rows) {
    const MetricsReport& m = r.report;
    std::snprintf(buf, sizeof(buf), "%.4f,%llu,%llu,%llu,%llu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", r.threshold,
                  static_cast<unsigned long long>(m.counts.tp), static_cast<unsigned long long>(m.counts.fp),
                  static_cast<unsigned long long>(m.counts.fn), static_cast<unsigned long long>(m.counts.tn),
                  m.accuracy, m.precision, m.recall, m.f1, m.jaccard, m.dsc, m.fp_per_volume);
    out << r.dataset << ',' << r.combo << ',' << buf << '\n';
  }
  return out.str();
}

std::string metrics_table(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%-16s %-10s %9s %9s %9s %9s %9s %9s %7s\n", "Dataset", "Combo", "Accuracy",
                "Jaccard", "Precision", "Recall", "F1", "DSC", "FP/Vol");
  out << buf;
  for (const MetricsRow& r : rows) {
    const MetricsReport& m = r.report;
    std::snprintf(buf, sizeof(buf), "%-16s %-10s %8.2f%% %8.2f%% %8.2f%% %8.2f%% %8.2f%% %8.2f%% %7.2f\n",
                  r.dataset.c_str(), r.combo.c_str(), 100 * m.accuracy, 100 * m.jaccard, 100 * m.precision,
                  100 * m.recall, 100 * m.f1, 100 * m.dsc, m.fp_per_volume);
    out << buf;
  }
  out << "(Jaccard is pixel-wise; empty-mask conventions: see README)\n";
  return out.str();
}

}  // namespace tgvunet
