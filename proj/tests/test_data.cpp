#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "lgn/data.hpp"

using namespace lgn;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / (std::string("lgn_data_") + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  [[nodiscard]] const fs::path& path() const { return path_; }

private:
  fs::path path_;
};

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>(v >> s));
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Three 2x2 images with labels 7, 0, 9.
void write_tiny_mnist(const fs::path& dir, const std::string& prefix) {
  std::vector<unsigned char> img;
  put_be32(img, 0x803);
  put_be32(img, 3);
  put_be32(img, 2);
  put_be32(img, 2);
  for (unsigned char b : {0, 255, 128, 127, 1, 2, 3, 4, 255, 255, 0, 0}) img.push_back(b);
  write_bytes(dir / (prefix + "-images-idx3-ubyte"), img);
  std::vector<unsigned char> lab;
  put_be32(lab, 0x801);
  put_be32(lab, 3);
  for (unsigned char b : {7, 0, 9}) lab.push_back(b);
  write_bytes(dir / (prefix + "-labels-idx1-ubyte"), lab);
}

}  // namespace

TEST(Idx, LoadsImagesAndLabels) {
  TempDir tmp;
  write_tiny_mnist(tmp.path(), "train");
  const auto ds = load_mnist(tmp.path(), Split::Train);
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.dims, 4u);
  EXPECT_EQ(ds.labels, (std::vector<std::int32_t>{7, 0, 9}));
  EXPECT_EQ(ds.features[1], 1.0);
  EXPECT_EQ(ds.features[2], 128.0 / 255.0);
  EXPECT_NO_THROW(ds.validate());
  const auto bin = binarize_threshold(ds);
  EXPECT_EQ(bin.features[2], 1.0);  // 128/255 > 0.5
  EXPECT_EQ(bin.features[3], 0.0);  // 127/255 < 0.5
}

TEST(Idx, BadMagicReportsValue) {
  TempDir tmp;
  std::vector<unsigned char> bytes;
  put_be32(bytes, 0x0000ABCD);
  write_bytes(tmp.path() / "x", bytes);
  try {
    (void)load_idx((tmp.path() / "x").string());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("0x0000abcd"), std::string::npos) << e.what();
    EXPECT_EQ(e.exit_code(), 2);
  }
}

TEST(Idx, TruncatedPayloadReportsSizes) {
  TempDir tmp;
  std::vector<unsigned char> bytes;
  put_be32(bytes, 0x803);
  put_be32(bytes, 10);
  put_be32(bytes, 28);
  put_be32(bytes, 28);
  bytes.resize(bytes.size() + 100);
  write_bytes(tmp.path() / "x", bytes);
  try {
    (void)load_idx((tmp.path() / "x").string());
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expected 7856 bytes"), std::string::npos) << msg;
    EXPECT_NE(msg.find("found 116"), std::string::npos) << msg;
  }
}

TEST(Idx, OverflowingDimensionsRejectedBeforeAllocation) {
  TempDir tmp;
  std::vector<unsigned char> bytes;
  put_be32(bytes, 0x803);
  put_be32(bytes, 0xFFFFFFFF);
  put_be32(bytes, 0xFFFFFFFF);
  put_be32(bytes, 0xFFFFFFFF);
  write_bytes(tmp.path() / "x", bytes);
  EXPECT_THROW((void)load_idx((tmp.path() / "x").string()), DataError);
}

TEST(Idx, MissingFileAndLabelMismatch) {
  TempDir tmp;
  EXPECT_THROW((void)load_mnist(tmp.path(), Split::Test), DataError);
  write_tiny_mnist(tmp.path(), "t10k");
  std::vector<unsigned char> lab;
  put_be32(lab, 0x801);
  put_be32(lab, 2);
  lab.push_back(1);
  lab.push_back(2);
  write_bytes(tmp.path() / "t10k-labels-idx1-ubyte", lab);
  EXPECT_THROW((void)load_mnist(tmp.path(), Split::Test), DataError);
}

TEST(Cifar, ParsesRecordsAndRejectsPartialOnes) {
  TempDir tmp;
  std::vector<unsigned char> bytes;
  for (int r = 0; r < 2; ++r) {
    bytes.push_back(static_cast<unsigned char>(3 + r));
    for (std::size_t i = 0; i < kCifarChannels * kCifarPixels; ++i) bytes.push_back(static_cast<unsigned char>(i % 256));
  }
  write_bytes(tmp.path() / "b.bin", bytes);
  Dataset ds;
  append_cifar_batch((tmp.path() / "b.bin").string(), ds);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.labels[1], 4);
  EXPECT_EQ(ds.dims, 3072u);
  EXPECT_EQ(ds.features[255], 1.0);
  bytes.pop_back();
  write_bytes(tmp.path() / "c.bin", bytes);
  Dataset bad;
  EXPECT_THROW(append_cifar_batch((tmp.path() / "c.bin").string(), bad), DataError);
}

TEST(Thermometer, MonotoneCodesWithChannelMajorLayout) {
  const auto thr = thermometer_thresholds();
  ASSERT_EQ(thr.size(), 31u);
  EXPECT_DOUBLE_EQ(thr[0], 255.0 / 32.0);
  // two channels, two pixels
  const std::vector<double> raw{0.0, 255.0, 100.0, 8.0};
  const auto bits = binarize_thermometer(raw, 2);
  ASSERT_EQ(bits.size(), 2u * 31u * 2u);
  const auto at = [&](std::size_t c, std::size_t t, std::size_t p) { return bits[(c * 31 + t) * 2 + p]; };
  for (std::size_t t = 0; t < 31; ++t) {
    EXPECT_EQ(at(0, t, 0), 0.0);
    EXPECT_EQ(at(0, t, 1), 1.0);
    EXPECT_EQ(at(1, t, 0), 100.0 > thr[t] ? 1.0 : 0.0);
    if (t > 0) {
      EXPECT_LE(at(1, t, 0), at(1, t - 1, 0));
    }
  }
  EXPECT_EQ(at(1, 0, 1), 1.0);
  EXPECT_EQ(at(1, 1, 1), 0.0);
  EXPECT_THROW((void)binarize_thermometer(raw, 3), std::invalid_argument);
}

TEST(Subset, DeterministicAndLabelPreserving) {
  const auto ds = synthetic_task(SyntheticKind::Parity, 8, 0, 0);
  const auto a = shuffled_subset(ds, 50, 3);
  const auto b = shuffled_subset(ds, 50, 3);
  const auto c = shuffled_subset(ds, 50, 4);
  EXPECT_EQ(a.features, b.features);
  EXPECT_NE(a.features, c.features);
  for (std::size_t s = 0; s < a.size(); ++s) {
    const auto r = a.row(s);
    EXPECT_EQ(a.labels[s], static_cast<int>(std::accumulate(r.begin(), r.end(), 0.0)) % 2);
  }
  EXPECT_EQ(shuffled_subset(ds, 0, 1).size(), 256u);
  EXPECT_EQ(shuffled_subset(ds, 10000, 1).size(), 256u);
}

TEST(Synthetic, ParityEnumeratesAllInputs) {
  const auto ds = synthetic_task(SyntheticKind::Parity, 5, 0, 0);
  EXPECT_EQ(ds.size(), 32u);
  EXPECT_TRUE(ds.is_binary());
  int ones = 0;
  for (auto y : ds.labels) ones += y;
  EXPECT_EQ(ones, 16);
}

TEST(Synthetic, TeacherLabelsComeFromTeacherCircuit) {
  const auto ds = synthetic_task(SyntheticKind::RandomTeacherCircuit, 10, 200, 6);
  const auto teacher = make_teacher(10, 6);
  const auto pred = predict_classes<std::int64_t>(hard_class_scores(teacher, ds.view()), 2);
  for (std::size_t s = 0; s < ds.size(); ++s) EXPECT_EQ(static_cast<std::size_t>(ds.labels[s]), pred[s]);
  const auto other_split = synthetic_task(SyntheticKind::RandomTeacherCircuit, 10, 200, 6, 1);
  EXPECT_NE(ds.features, other_split.features);
}

TEST(Synthetic, TwoMoonsIsBinaryAndBalancedish) {
  const auto ds = synthetic_task(SyntheticKind::TwoMoonsBinarized, 20, 2000, 1);
  EXPECT_TRUE(ds.is_binary());
  EXPECT_NO_THROW(ds.validate());
  int ones = 0;
  for (auto y : ds.labels) ones += y;
  EXPECT_GT(ones, 850);
  EXPECT_LT(ones, 1150);
  EXPECT_THROW((void)parse_synthetic_kind("spirals"), std::invalid_argument);
}

TEST(PixelReport, BinsPartitionValues) {
  const std::vector<double> v{0.0, 0.0, 0.05, 0.1, 0.5, 0.9, 0.95, 1.0};
  const auto r = pixel_distribution_report(v);
  EXPECT_EQ(r.values, 8u);
  EXPECT_DOUBLE_EQ(r.exactly_zero, 2.0 / 8);
  EXPECT_DOUBLE_EQ(r.low, 1.0 / 8);
  EXPECT_DOUBLE_EQ(r.middle, 3.0 / 8);
  EXPECT_DOUBLE_EQ(r.high, 2.0 / 8);
  EXPECT_DOUBLE_EQ(r.binary_like, 5.0 / 8);
  EXPECT_DOUBLE_EQ(r.exactly_zero + r.low + r.middle + r.high, 1.0);
  EXPECT_THROW((void)pixel_distribution_report(std::vector<double>{1.5}), DataError);
}
