#pragma once

#include "escape/common.hpp"
#include "escape/soft_prompt.hpp"

#include <filesystem>
#include <string>

namespace escape {

enum class ProjectorAct { leaky_relu, relu, tanh };
std::string to_string(ProjectorAct a);
ProjectorAct projector_act_from_string(const std::string& s);

inline constexpr double kLeakySlope = 0.01;
inline constexpr int kDefaultProjectorHidden = 768;

/// Row-wise two-layer map from a source embedding space to a target one:
/// out = W2 · act(W1 · p + b1) + b2 for each prompt row p.
struct Projector {
  Matrixf W1;  // e_h x e_s
  Vectorf b1;  // e_h
  Matrixf W2;  // e_t x e_h
  Vectorf b2;  // e_t
  ProjectorAct act = ProjectorAct::leaky_relu;
  std::string source_model_id;
  std::string target_model_id;

  int e_s() const { return static_cast<int>(W1.cols()); }
  int e_h() const { return static_cast<int>(W1.rows()); }
  int e_t() const { return static_cast<int>(W2.rows()); }
  void validate() const;
};

/// Small-variance random initialization (Xavier-style scale).
Projector init_projector(int e_s, int e_h, int e_t, uint64_t seed,
                         ProjectorAct act = ProjectorAct::leaky_relu);

/// Identity-preserving initialization for equal dims: project(p) == p for
/// inputs with entries within `linear_range` (all activations kept in the
/// linear region).
Projector init_projector_identity(int e, int e_h, double linear_range = 5.0);

Matrixf project_rows(const Matrixf& src_rows, const Projector& proj);

/// Eq.-level transfer map applied to a full prompt; output metadata records
/// the projector's target model.
SoftPrompt project(const SoftPrompt& src, const Projector& proj);

/// Gradients of the row map. d_src may be null when the source is frozen.
struct ProjectorGrads {
  Matrixf W1, W2;
  Vectorf b1, b2;
};
ProjectorGrads make_zero_projector_grads(const Projector& proj);
void project_rows_backward(const Matrixf& src_rows, const Projector& proj,
                           const Matrixf& d_out, ProjectorGrads& grads,
                           Matrixf* d_src = nullptr);

// Checkpoint IO (format tag ESPJ1).
void save_projector(const Projector& proj, const std::filesystem::path& path);
Projector load_projector(const std::filesystem::path& path);

}  // namespace escape
