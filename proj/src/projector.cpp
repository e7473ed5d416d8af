#include "escape/projector.hpp"

#include "escape/io.hpp"
#include "escape/rng.hpp"

namespace escape {

namespace fs = std::filesystem;

std::string to_string(ProjectorAct a) {
  switch (a) {
    case ProjectorAct::leaky_relu: return "leaky_relu";
    case ProjectorAct::relu: return "relu";
    case ProjectorAct::tanh: return "tanh";
  }
  throw Error("unreachable projector activation");
}

ProjectorAct projector_act_from_string(const std::string& s) {
  if (s == "leaky_relu") return ProjectorAct::leaky_relu;
  if (s == "relu") return ProjectorAct::relu;
  if (s == "tanh") return ProjectorAct::tanh;
  throw Error("unknown projector activation: " + s);
}

void Projector::validate() const {
  require(W1.rows() > 0 && W1.cols() > 0 && W2.rows() > 0, "projector has empty shapes");
  require(b1.size() == W1.rows(), "projector b1/W1 shape mismatch");
  require(W2.cols() == W1.rows(), "projector W2/W1 shape mismatch");
  require(b2.size() == W2.rows(), "projector b2/W2 shape mismatch");
  require(W1.allFinite() && b1.allFinite() && W2.allFinite() && b2.allFinite(),
          "projector has non-finite entries");
}

namespace {

float act_forward(float x, ProjectorAct a) {
  switch (a) {
    case ProjectorAct::leaky_relu: return x > 0 ? x : static_cast<float>(kLeakySlope) * x;
    case ProjectorAct::relu: return x > 0 ? x : 0.0f;
    case ProjectorAct::tanh: return std::tanh(x);
  }
  return x;
}

float act_grad(float x, ProjectorAct a) {
  switch (a) {
    case ProjectorAct::leaky_relu: return x > 0 ? 1.0f : static_cast<float>(kLeakySlope);
    case ProjectorAct::relu: return x > 0 ? 1.0f : 0.0f;
    case ProjectorAct::tanh: {
      const float t = std::tanh(x);
      return 1.0f - t * t;
    }
  }
  return 1.0f;
}

Matrixf pre_activation(const Matrixf& src_rows, const Projector& proj) {
  Matrixf pre = src_rows * proj.W1.transpose();
  pre.rowwise() += proj.b1.transpose();
  return pre;
}

}  // namespace

Projector init_projector(int e_s, int e_h, int e_t, uint64_t seed, ProjectorAct act) {
  require(e_s > 0 && e_h > 0 && e_t > 0, "projector dims must be positive");
  Projector p;
  p.act = act;
  Rng rng(seed);
  const double s1 = std::sqrt(1.0 / e_s);
  const double s2 = std::sqrt(1.0 / e_h);
  p.W1.resize(e_h, e_s);
  for (Eigen::Index i = 0; i < p.W1.size(); ++i)
    p.W1.data()[i] = static_cast<float>(rng.normal(0.0, s1));
  p.b1 = Vectorf::Zero(e_h);
  p.W2.resize(e_t, e_h);
  for (Eigen::Index i = 0; i < p.W2.size(); ++i)
    p.W2.data()[i] = static_cast<float>(rng.normal(0.0, s2));
  p.b2 = Vectorf::Zero(e_t);
  return p;
}

Projector init_projector_identity(int e, int e_h, double linear_range) {
  require(e_h >= e, "identity projector needs hidden size >= embed dim");
  require(linear_range > 0, "linear_range must be positive");
  Projector p;
  p.act = ProjectorAct::leaky_relu;
  // Shift inputs into the positive (linear) region, undo the shift after W2.
  const float c = static_cast<float>(linear_range);
  p.W1 = Matrixf::Zero(e_h, e);
  p.W1.topLeftCorner(e, e).setIdentity();
  p.b1 = Vectorf::Zero(e_h);
  p.b1.head(e).setConstant(c);
  p.W2 = Matrixf::Zero(e, e_h);
  p.W2.topLeftCorner(e, e).setIdentity();
  p.b2 = Vectorf::Constant(e, -c);
  return p;
}

Matrixf project_rows(const Matrixf& src_rows, const Projector& proj) {
  proj.validate();
  require(src_rows.cols() == proj.e_s(), "projector input width mismatch");
  Matrixf h = pre_activation(src_rows, proj);
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = act_forward(h.data()[i], proj.act);
  Matrixf out = h * proj.W2.transpose();
  out.rowwise() += proj.b2.transpose();
  return out;
}

SoftPrompt project(const SoftPrompt& src, const Projector& proj) {
  require(src.embed_dim() == proj.e_s(),
          "soft prompt embed_dim does not match projector input dim");
  SoftPrompt out;
  out.rows = project_rows(src.rows, proj);
  out.source_model_id =
      proj.target_model_id.empty() ? src.source_model_id : proj.target_model_id;
  out.task = src.task;
  out.init_text = src.init_text;
  out.seed = src.seed;
  return out;
}

ProjectorGrads make_zero_projector_grads(const Projector& proj) {
  ProjectorGrads g;
  g.W1 = Matrixf::Zero(proj.W1.rows(), proj.W1.cols());
  g.b1 = Vectorf::Zero(proj.b1.size());
  g.W2 = Matrixf::Zero(proj.W2.rows(), proj.W2.cols());
  g.b2 = Vectorf::Zero(proj.b2.size());
  return g;
}

void project_rows_backward(const Matrixf& src_rows, const Projector& proj,
                           const Matrixf& d_out, ProjectorGrads& grads, Matrixf* d_src) {
  require(d_out.rows() == src_rows.rows() && d_out.cols() == proj.e_t(),
          "projector backward shape mismatch");
  Matrixf pre = pre_activation(src_rows, proj);
  Matrixf h = pre;
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = act_forward(h.data()[i], proj.act);
  grads.W2.noalias() += d_out.transpose() * h;
  grads.b2 += d_out.colwise().sum().transpose();
  Matrixf dh = d_out * proj.W2;
  for (Eigen::Index i = 0; i < dh.size(); ++i) dh.data()[i] *= act_grad(pre.data()[i], proj.act);
  grads.W1.noalias() += dh.transpose() * src_rows;
  grads.b1 += dh.colwise().sum().transpose();
  if (d_src) *d_src = dh * proj.W1;
}

inline constexpr char kProjectorMagic[] = "ESPJ1";

void save_projector(const Projector& proj, const fs::path& path) {
  proj.validate();
  auto out = open_binary_out(path);
  out.write(kProjectorMagic, 5);
  write_u32(out, static_cast<uint32_t>(proj.e_s()));
  write_u32(out, static_cast<uint32_t>(proj.e_h()));
  write_u32(out, static_cast<uint32_t>(proj.e_t()));
  write_string(out, to_string(proj.act));
  write_string(out, proj.source_model_id);
  write_string(out, proj.target_model_id);
  write_matrix_f32(out, proj.W1);
  write_vector_f32(out, proj.b1);
  write_matrix_f32(out, proj.W2);
  write_vector_f32(out, proj.b2);
  require(out.good(), "failed writing projector: " + path.string());
}

Projector load_projector(const fs::path& path) {
  auto in = open_binary_in(path);
  char magic[5];
  in.read(magic, 5);
  require(in.good() && std::string(magic, 5) == kProjectorMagic,
          "not a projector checkpoint: " + path.string());
  const uint32_t e_s = read_u32(in);
  const uint32_t e_h = read_u32(in);
  const uint32_t e_t = read_u32(in);
  Projector p;
  p.act = projector_act_from_string(read_string(in));
  p.source_model_id = read_string(in);
  p.target_model_id = read_string(in);
  p.W1 = read_matrix_f32(in, e_h, e_s);
  p.b1 = read_vector_f32(in, e_h);
  p.W2 = read_matrix_f32(in, e_t, e_h);
  p.b2 = read_vector_f32(in, e_t);
  require(in.good(), "truncated projector checkpoint: " + path.string());
  p.validate();
  return p;
}

}  // namespace escape
