#include "suslab/checkpoint.hpp"

#include "suslab/error.hpp"
#include "suslab/tensor_file.hpp"

namespace suslab::toylm {
namespace {

void check_field(const char* name, std::int64_t stored, std::int64_t expected) {
  require(stored == expected, ErrorKind::DimensionMismatch,
          std::string("checkpoint has ") + name + "=" + std::to_string(stored) + " but " + name + "=" +
              std::to_string(expected) + " was expected");
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  params.check_shapes();
  TensorContainer c;
  c.kind = "checkpoint";
  c.version = kCheckpointVersion;
  const auto& cfg = params.config;
  c.fields["d_model"] = std::int64_t{cfg.d_model};
  c.fields["n_layers"] = std::int64_t{cfg.n_layers};
  c.fields["n_heads"] = std::int64_t{cfg.n_heads};
  c.fields["max_len"] = std::int64_t{cfg.max_len};
  c.fields["vocab_size"] = std::int64_t{cfg.vocab_size};
  c.fields["mlp_mult"] = std::int64_t{cfg.mlp_mult};
  params.visit([&c](const std::string& name, const TensorShape& shape, const double* data, std::size_t n) {
    c.tensors.push_back(TensorRecord{name, shape.dims, std::vector<double>(data, data + n)});
  });
  write_tensor_container(path, c);
}

ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  const TensorContainer c = read_tensor_container(path);
  require(c.kind == "checkpoint", ErrorKind::MalformedHeader,
          "'" + path.string() + "' holds a '" + c.kind + "' container, not a checkpoint");
  require(c.version == kCheckpointVersion, ErrorKind::MalformedHeader,
          "unsupported checkpoint version " + std::to_string(c.version));
  ModelConfig cfg;
  cfg.d_model = static_cast<int>(c.int_field("d_model"));
  cfg.n_layers = static_cast<int>(c.int_field("n_layers"));
  cfg.n_heads = static_cast<int>(c.int_field("n_heads"));
  cfg.max_len = static_cast<int>(c.int_field("max_len"));
  cfg.vocab_size = static_cast<int>(c.int_field("vocab_size"));
  cfg.mlp_mult = static_cast<int>(c.int_field("mlp_mult"));
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(ErrorKind::MalformedHeader, std::string("invalid hyperparameters in header: ") + e.what());
  }
  if (expected != nullptr) {
    check_field("d_model", cfg.d_model, expected->d_model);
    check_field("n_layers", cfg.n_layers, expected->n_layers);
    check_field("n_heads", cfg.n_heads, expected->n_heads);
    check_field("max_len", cfg.max_len, expected->max_len);
    check_field("vocab_size", cfg.vocab_size, expected->vocab_size);
    check_field("mlp_mult", cfg.mlp_mult, expected->mlp_mult);
  }

  ModelParams params = ModelParams::zeros(cfg);
  std::size_t matched = 0;
  params.visit([&](const std::string& name, const TensorShape& shape, double* data, std::size_t n) {
    const TensorRecord* t = c.find(name);
    require(t != nullptr, ErrorKind::MalformedHeader, "checkpoint lacks tensor '" + name + "'");
    require(t->shape == shape.dims, ErrorKind::DimensionMismatch,
            "tensor '" + name + "' shape in payload disagrees with header hyperparameters");
    std::copy(t->values.begin(), t->values.begin() + static_cast<std::ptrdiff_t>(n), data);
    ++matched;
  });
  require(matched == c.tensors.size(), ErrorKind::DimensionMismatch,
          "checkpoint has " + std::to_string(c.tensors.size()) + " tensors, model expects " +
              std::to_string(matched));
  return params;
}

}  // namespace suslab::toylm
