#pragma once

#include "escape/common.hpp"
#include "escape/corpus.hpp"
#include "escape/model_registry.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace escape {

struct DetectorVerdict {
  double p_human = 0.0;
  double p_ai = 0.0;
  Label label = Label::human;
};

enum class DetectorKind { supervised, zero_shot };
std::string to_string(DetectorKind k);
DetectorKind detector_kind_from_string(const std::string& s);

enum class Perturber { mask_fill, synonym_swap, identity };
std::string to_string(Perturber p);
Perturber perturber_from_string(const std::string& s);

struct PerturbationConfig {
  int n_perturbations = 10;
  double span_fraction = 0.15;
  Perturber perturber = Perturber::synonym_swap;
  uint64_t seed = 0;

  void validate() const {
    require(n_perturbations >= 1, "n_perturbations must be at least 1");
    require(span_fraction > 0.0 && span_fraction < 1.0, "span_fraction must be in (0,1)");
  }
};

// Text features for the supervised classifier: hashed unigram and bigram
// frequencies plus a few coarse stylometric statistics.
inline constexpr int kUnigramBuckets = 256;
inline constexpr int kBigramBuckets = 512;
inline constexpr int kStyleFeatures = 8;
inline constexpr int kFeatureDim = kUnigramBuckets + kBigramBuckets + kStyleFeatures;

Vectorf featurize(const std::string& text);

struct SupervisedParams {
  Vectorf w = Vectorf::Zero(kFeatureDim);
  float b = 0.0f;
};

struct FineTuneHyper {
  double lr = 2e-5;
  double weight_decay = 0.01;
  int epochs = 10;
  int batch_size = 32;
  uint64_t seed = 0;
};

/// A trained detector. Supervised: linear feature classifier. Zero-shot:
/// perturbation-discrepancy score through a calibrated logistic link.
struct DetectorHandle {
  DetectorKind kind = DetectorKind::supervised;

  // supervised
  SupervisedParams params;
  FineTuneHyper hyper;

  // zero-shot
  std::string proxy_model_id;
  std::optional<ModelHandle> proxy;
  PerturbationConfig perturb;
  double threshold = 0.0;
  double calib_scale = 1.0;

  uint64_t seed = 0;
};

DetectorVerdict classify(const DetectorHandle& det, const std::string& text);
double reward(const DetectorHandle& det, const std::string& text);

/// Raw perturbation-discrepancy score: mean-per-token log p(text) minus the
/// mean of the same statistic over perturbed variants. Positive = AI-like.
double detectgpt_score(const ModelHandle& proxy, const std::string& text,
                       const PerturbationConfig& cfg);

/// The perturbed texts behind detectgpt_score, exposed so an external scorer
/// can be run on the exact same variants. Deterministic in (text, cfg.seed).
/// mask_fill resamples chosen positions from the proxy model itself.
std::vector<std::string> make_perturbations(const ModelHandle& proxy, const std::string& text,
                                            const PerturbationConfig& cfg);

double detectgpt_score_with_perturbations(const ModelHandle& proxy, const std::string& text,
                                          const std::vector<std::string>& perturbed);

/// Mean per-token log-probability of the text under the model. Texts longer
/// than the model context are scored in consecutive windows; `windowed`
/// reports whether that happened.
double mean_token_log_prob(const ModelHandle& m, const std::string& text, bool* windowed);
double mean_token_log_prob(const ModelHandle& m, const std::string& text);

struct FineTuneResult {
  DetectorHandle detector;
  int best_epoch = 0;        // 1-based; 0 = base returned unchanged
  double val_f1_ai = 0.0;
  double val_f1_human = 0.0;
};

/// Trains the supervised classifier on a paired detection dataset and keeps
/// the epoch with the best validation AI-class F1.
FineTuneResult fine_tune_detector(const SupervisedParams& base, const DetectionDataset& data,
                                  const FineTuneHyper& hyper);

/// Builds and calibrates a zero-shot detector: threshold maximizes val-split
/// F1 over candidate cut points; the logistic scale tracks score spread.
DetectorHandle calibrate_zero_shot(const ModelHandle& proxy, const DetectionDataset& data,
                                   const PerturbationConfig& cfg);

// Checkpoint directory: manifest.json plus binary weights for supervised.
void save_detector(const DetectorHandle& det, const std::filesystem::path& dir);
DetectorHandle load_detector(const std::filesystem::path& dir,
                             const std::filesystem::path& home);

}  // namespace escape
