#include "oracles.hpp"

#include <cmath>

namespace oracle {

double selfcon(const std::vector<std::vector<std::vector<double>>>& views,
               const std::vector<std::int64_t>& labels, double tau) {
  const std::size_t n = views.size();
  const std::size_t v = views.at(0).size();
  auto dot = [&](std::size_t i, std::size_t w, std::size_t l, std::size_t w2) {
    double s = 0.0;
    for (std::size_t d = 0; d < views[i][w].size(); ++d) s += views[i][w][d] * views[l][w2][d];
    return s / tau;
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t positives = 0;
    for (std::size_t p = 0; p < n; ++p)
      if (p != i && labels[p] == labels[i]) ++positives;
    if (positives == 0) continue;
    for (std::size_t w = 0; w < v; ++w) {
      double inner = 0.0;
      for (std::size_t p = 0; p < n; ++p) {
        if (p == i || labels[p] != labels[i]) continue;
        for (std::size_t w2 = 0; w2 < v; ++w2) {
          double den = 0.0;
          for (std::size_t l = 0; l < n; ++l)
            if (l != i) den += std::exp(dot(i, w, l, w2));
          inner += std::log(std::exp(dot(i, w, p, w2)) / den);
        }
      }
      total += -inner / static_cast<double>(positives * v);
    }
  }
  return total;
}

double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double good = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) good += 1.0;
      else if (scores[i] == scores[j]) good += 0.5;
    }
  }
  return good / pairs;
}

double confusion_balanced_accuracy(const std::vector<double>& scores,
                                   const std::vector<int>& labels, double threshold) {
  int tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) (predicted ? tp : fn)++;
    else (predicted ? fp : tn)++;
  }
  const double tpr = static_cast<double>(tp) / (tp + fn);
  const double tnr = static_cast<double>(tn) / (tn + fp);
  return (tpr + tnr) / 2.0;
}

double rdra(const std::vector<std::vector<double>>& r_in,
            const std::vector<std::vector<double>>& r_out, double alpha, bool recon_over_b2) {
  const std::size_t b = r_in.size();
  const std::size_t n = r_in.at(0).size();
  double recon = 0.0;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t k = 0; k < n; ++k) recon += std::pow(r_in[i][k] - r_out[i][k], 2);
  auto sqdist = [&](const std::vector<std::vector<double>>& r, std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += std::pow(r[i][k] - r[j][k], 2);
    return s;
  };
  double rel = 0.0;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = i + 1; j < b; ++j)
      rel += std::pow(sqdist(r_out, i, j) - sqdist(r_in, i, j), 2);
  const double bb = static_cast<double>(b * b);
  const double recon_norm = recon_over_b2 ? bb : static_cast<double>(b * n);
  return (1.0 - alpha) * recon / recon_norm + alpha * rel / bb;
}

std::map<std::string, std::int64_t> full_layout_quotas(std::int64_t total,
                                                  const std::vector<synthdet::ContentType>& present) {
  // Full-layout percentages in units of 1/40000 of the corpus, so that 2.8125%
  // (the painting SD and AnimagineXL cells) is the integer 1125.
  static const std::map<std::string, std::int64_t> quarter_bp = {
      {"photo/none/ImageNet", 1500},
      {"photo/none/LSUN", 1500},
      {"photo/none/COCO", 3000},
      {"photo/StyleGAN-XL/generated", 1500},
      {"photo/ProGAN/ForenSynths", 1500},
      {"photo/SD-2.1/SDXL-1.0/generated", 3000},
      {"painting/none/WikiArt", 2250},
      {"painting/none/Danbooru", 2250},
      {"painting/StyleGAN3/generated", 2250},
      {"painting/SD-2.1/SDXL-1.0/generated", 1125},
      {"painting/AnimagineXL/generated", 1125},
      {"face/none/FFHQ", 4500},
      {"face/StyleGAN-XL/generated", 2250},
      {"face/SD-2.1/SDXL-1.0/generated", 2250},
      {"uncategorized/none/Photozilla", 5000},
      {"uncategorized/Midjourney/JourneyDB", 2500},
      {"uncategorized/DALLE3/LAION-DALLE3", 2500},
  };
  auto type_of = [](const std::string& key) { return key.substr(0, key.find('/')); };
  auto is_present = [&](const std::string& key) {
    for (auto c : present)
      if (type_of(key) == synthdet::to_string(c)) return true;
    return false;
  };
  std::int64_t denom = 0;
  for (const auto& [key, share] : quarter_bp)
    if (is_present(key)) denom += share;
  std::map<std::string, std::int64_t> out;
  for (const auto& [key, share] : quarter_bp) {
    if (!is_present(key)) continue;
    if ((total * share) % denom != 0) return {};
    out[key] = total * share / denom;
  }
  return out;
}

}  // namespace oracle
