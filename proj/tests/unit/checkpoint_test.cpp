#include "suslab/checkpoint.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "suslab/error.hpp"
#include "suslab/tensor_file.hpp"

namespace suslab::toylm {
namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "suslab_checkpoint_test";
  fs::create_directories(dir);
  return dir / name;
}

ModelConfig tiny() {
  ModelConfig c;
  c.vocab_size = 512;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.max_len = 12;
  return c;
}

ErrorKind load_error(const fs::path& path, const ModelConfig* expected = nullptr) {
  try {
    load_checkpoint(path, expected);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "load succeeded";
  return ErrorKind::Io;
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto params = ModelParams::random(tiny(), 5, 0.3);
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(params, path);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.config, params.config);
  std::vector<double> a;
  std::vector<double> b;
  params.visit([&a](const std::string&, const TensorShape&, const double* d, std::size_t n) { a.insert(a.end(), d, d + n); });
  back.visit([&b](const std::string&, const TensorShape&, const double* d, std::size_t n) { b.insert(b.end(), d, d + n); });
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), a.size() * sizeof(double)));
}

TEST(Checkpoint, EditedVocabSizeIsDimensionMismatch) {
  const auto path = temp_path("vocab_edit.ckpt");
  save_checkpoint(ModelParams::random(tiny(), 1), path);
  auto c = read_tensor_container(path);
  c.fields["vocab_size"] = std::int64_t{511};
  write_tensor_container(path, c);
  EXPECT_EQ(load_error(path), ErrorKind::DimensionMismatch);
}

TEST(Checkpoint, WidthMismatchNamesBothWidths) {
  const auto path = temp_path("width.ckpt");
  save_checkpoint(ModelParams::random(tiny(), 1), path);
  ModelConfig want = tiny();
  want.d_model = 32;
  try {
    load_checkpoint(path, &want);
    FAIL() << "expected a dimension mismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimensionMismatch);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("16"), std::string::npos) << msg;
    EXPECT_NE(msg.find("32"), std::string::npos) << msg;
  }
}

TEST(Checkpoint, TruncatedAndMalformedFilesHaveDistinctErrors) {
  const auto path = temp_path("trunc.ckpt");
  save_checkpoint(ModelParams::random(tiny(), 1), path);
  fs::resize_file(path, fs::file_size(path) - 100);
  EXPECT_EQ(load_error(path), ErrorKind::TruncatedPayload);

  const auto bad = temp_path("bad.ckpt");
  std::ofstream(bad, std::ios::binary) << "NOTSUSLAB and some more bytes";
  EXPECT_EQ(load_error(bad), ErrorKind::MalformedHeader);
}

}  // namespace
}  // namespace suslab::toylm
