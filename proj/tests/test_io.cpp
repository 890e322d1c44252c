#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <string>

#include "spherebg/io.hpp"
#include "spherebg/random.hpp"

using namespace spherebg;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("spherebg_io_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

Image random_image(int w, int h, int c, std::uint64_t seed) {
  Image img(w, h, c);
  Rng rng(seed);
  for (double& v : img.data) v = static_cast<double>(static_cast<float>(rng.uniform(-2.0, 5.0)));
  return img;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::InvariantViolation;
}

}  // namespace

TEST(Pfm, RoundTripIsExactForFloatValues) {
  for (int c : {1, 3}) {
    const Image img = random_image(5, 4, c, 10 + c);
    const Image back = decode_pfm(encode_pfm(img));
    ASSERT_TRUE(back.same_shape(img));
    EXPECT_EQ(back.data, img.data);
  }
}

TEST(Pfm, LayoutIsBottomRowFirstLittleEndian) {
  Image img(3, 2, 1);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(i) + 0.25;
  const std::string bytes = encode_pfm(img);
  const std::string header = "Pf\n3 2\n-1.0\n";
  ASSERT_EQ(bytes.substr(0, header.size()), header);
  ASSERT_EQ(bytes.size(), header.size() + 6 * 4);
  auto value_at = [&](std::size_t k) {
    unsigned char b[4];
    std::memcpy(b, bytes.data() + header.size() + 4 * k, 4);
    const std::uint32_t u = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    return std::bit_cast<float>(u);
  };
  EXPECT_EQ(value_at(0), 3.25f);  // bottom-left pixel (row 1, col 0)
  EXPECT_EQ(value_at(3), 0.25f);  // top-left pixel
  EXPECT_EQ(value_at(5), 2.25f);
}

TEST(Pfm, MalformedInput) {
  EXPECT_EQ(code_of([] { decode_pfm("P6\n2 2\n255\n"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { decode_pfm("Pf\n2 2\n-1.0\nabc"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { encode_pfm(Image(2, 2, 2)); }), ErrorCode::InvalidArgument);
}

TEST(Srgb, TransferCurveValues) {
  EXPECT_EQ(linear_to_srgb(0.0), 0.0);
  EXPECT_NEAR(linear_to_srgb(1.0), 1.0, 1e-15);
  // 1.055 * 0.5^(1/2.4) - 0.055
  EXPECT_NEAR(linear_to_srgb(0.5), 0.735356983, 1e-9);
  EXPECT_NEAR(linear_to_srgb(0.002), 0.02584, 1e-12);
  EXPECT_EQ(linear_to_srgb(-1.0), 0.0);
  EXPECT_EQ(linear_to_srgb(3.0), linear_to_srgb(1.0));
  for (int k = 0; k <= 100; ++k) {
    const double x = k / 100.0;
    EXPECT_NEAR(srgb_to_linear(linear_to_srgb(x)), x, 1e-12);
  }
}

TEST(Png, RoundTripOfEightBitCodes) {
  for (int c : {1, 3}) {
    Image img(7, 3, c);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>((i * 37) % 256) / 255.0;
    const Image back = decode_png(encode_png(img, false), c, false);
    ASSERT_TRUE(back.same_shape(img));
    for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_EQ(back.data[i], img.data[i]);
  }
}

TEST(Png, SrgbRoundTripIsIdempotentAfterOneQuantization) {
  const Image img = random_image(6, 5, 3, 3);
  const std::string once = encode_png(img);
  const Image back = decode_png(once);
  EXPECT_EQ(encode_png(back), once);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double code = std::clamp(linear_to_srgb(img.data[i]), 0.0, 1.0) * 255.0;
    EXPECT_NEAR(linear_to_srgb(back.data[i]) * 255.0, std::round(code), 1e-6);
  }
  EXPECT_EQ(encode_png(img), once);  // deterministic bytes
}

TEST(Png, GrayFileDecodesToRgb) {
  Image g(2, 2, 1, 0.5);
  const Image rgb = decode_png(encode_png(g, false), 3, false);
  ASSERT_EQ(rgb.channels, 3);
  for (double v : rgb.data) EXPECT_NEAR(v, 128.0 / 255.0, 1e-12);
}

TEST(Png, GarbageIsRejected) {
  EXPECT_EQ(code_of([] { decode_png("not a png at all"); }), ErrorCode::ParseError);
}

TEST(AtomicWrite, ReplacesTargetAndLeavesNoTemporary) {
  const fs::path d = scratch_dir("atomic");
  const std::string path = (d / "out.bin").string();
  write_file_atomic(path, "first");
  write_file_atomic(path, "second");
  EXPECT_EQ(read_file(path), "second");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(d)) ++files;
  EXPECT_EQ(files, 1u);
}

TEST(AtomicWrite, MissingDirectoryIsIoFailure) {
  const fs::path d = scratch_dir("atomic_missing");
  const std::string path = (d / "nope" / "out.bin").string();
  EXPECT_EQ(code_of([&] { write_file_atomic(path, "x"); }), ErrorCode::IoFailure);
  EXPECT_FALSE(fs::exists(path));
  EXPECT_EQ(code_of([&] { read_file(path); }), ErrorCode::IoFailure);
}

namespace {

Checkpoint sample_checkpoint() {
  MlpSpec fg = foreground_spec({6, 5}, 3, 2, 3);
  MlpSpec bg = background_spec(3, 2, {4});
  Checkpoint ck{init_parameters(fg, bg, 9, 3.0), {}};
  Rng rng(4);
  for (double& v : ck.params.flat) v = rng.uniform(-1.0, 1.0);
  ck.sampling.near = 0.3;
  ck.sampling.coarse_count = 7;
  ck.sampling.fine_count = 5;
  return ck;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
  const Checkpoint ck = sample_checkpoint();
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
  EXPECT_EQ(back.params.flat, ck.params.flat);
  EXPECT_EQ(spec_to_json(back.params.foreground.spec), spec_to_json(ck.params.foreground.spec));
  EXPECT_EQ(spec_to_json(back.params.background.spec), spec_to_json(ck.params.background.spec));
  EXPECT_EQ(back.params.sphere_radius, 3.0);
  EXPECT_EQ(back.sampling.near, 0.3);
  EXPECT_EQ(back.sampling.coarse_count, 7);
  EXPECT_EQ(back.sampling.fine_count, 5);
}

TEST(Checkpoint, DocumentedLayout) {
  const Checkpoint ck = sample_checkpoint();
  const std::string bytes = encode_checkpoint(ck);
  ASSERT_EQ(bytes.substr(0, 8), "SPHBGCK1");
  std::uint64_t hlen = 0;
  for (int i = 7; i >= 0; --i) hlen = (hlen << 8) | static_cast<unsigned char>(bytes[8 + i]);
  const std::size_t n = ck.params.flat.size();
  ASSERT_EQ(bytes.size(), 16 + hlen + 8 * n);
  const auto header = nlohmann::json::parse(bytes.substr(16, hlen));
  EXPECT_EQ(header.at("count").get<std::size_t>(), n);
  for (std::size_t k = 0; k < n; ++k) {
    std::uint64_t u = 0;
    for (int i = 7; i >= 0; --i) u = (u << 8) | static_cast<unsigned char>(bytes[16 + hlen + 8 * k + i]);
    ASSERT_EQ(std::bit_cast<double>(u), ck.params.flat[k]);
  }
}

TEST(Checkpoint, CorruptInputIsParseError) {
  std::string bytes = encode_checkpoint(sample_checkpoint());
  EXPECT_EQ(code_of([&] { decode_checkpoint(bytes.substr(0, bytes.size() - 3)); }), ErrorCode::ParseError);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(code_of([&] { decode_checkpoint(bad); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([&] { decode_checkpoint("short"); }), ErrorCode::ParseError);
}

TEST(Checkpoint, FileRoundTrip) {
  const fs::path d = scratch_dir("ckpt");
  const Checkpoint ck = sample_checkpoint();
  save_checkpoint((d / "a.ckpt").string(), ck);
  EXPECT_EQ(load_checkpoint((d / "a.ckpt").string()).params.flat, ck.params.flat);
  EXPECT_EQ(code_of([&] { load_checkpoint((d / "missing.ckpt").string()); }), ErrorCode::IoFailure);
}

TEST(Dataset, DirectoryRoundTrip) {
  const fs::path d = scratch_dir("dataset");
  SynthOptions o;
  o.width = 8;
  o.height = 6;
  o.n_views = 5;
  const SceneSpec scene = default_scene();
  const SsoDataset data = generate_synthetic_scene(scene, o);
  save_dataset(d.string(), data, &scene);
  const SsoDataset back = load_dataset(d.string());
  ASSERT_EQ(back.views.size(), data.views.size());
  EXPECT_EQ(back.train, data.train);
  EXPECT_EQ(back.heldout, data.heldout);
  for (std::size_t i = 0; i < data.views.size(); ++i) {
    const View& a = data.views[i];
    const View& b = back.views[i];
    EXPECT_EQ(b.camera.position(), a.camera.position());
    EXPECT_EQ(b.camera.rotation(), a.camera.rotation());
    EXPECT_EQ(b.camera.focal_length(), a.camera.focal_length());
    for (std::size_t k = 0; k < a.rgb.data.size(); ++k)
      ASSERT_EQ(b.rgb.data[k], static_cast<double>(static_cast<float>(a.rgb.data[k])));
    for (std::size_t k = 0; k < a.depth.data.size(); ++k)
      ASSERT_EQ(b.depth.data[k], static_cast<double>(static_cast<float>(a.depth.data[k])));
    EXPECT_EQ(b.alpha.data, a.alpha.data);
  }
  const auto j = nlohmann::json::parse(read_file((d / "dataset.json").string()));
  EXPECT_TRUE(j.contains("scene"));
  EXPECT_TRUE(fs::exists(d / "view_000.png"));
}

TEST(Dataset, MissingDirectoryIsIoFailure) {
  EXPECT_EQ(code_of([] { load_dataset("/nonexistent/spherebg/dataset"); }), ErrorCode::IoFailure);
}

TEST(LossCsv, HeaderAndRoundTrip) {
  std::vector<LossRecord> rows;
  for (int s = 1; s <= 3; ++s)
    rows.push_back({s * 100, total_loss(0.1 / s, 0.02 * s, 0.3, 0.25 * s / 3.0, 1.0 * s / 3.0)});
  const std::string text = loss_csv(rows);
  EXPECT_EQ(text.substr(0, text.find('\n')), "step,recon,l_fg,l_bg,lambda_fg,lambda_bg,total");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  const auto back = parse_loss_csv(text);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].step, rows[i].step);
    EXPECT_NEAR(back[i].loss.total, rows[i].loss.total, 1e-8 * std::abs(rows[i].loss.total));
    EXPECT_NEAR(back[i].loss.lambda_bg, rows[i].loss.lambda_bg, 1e-8);
  }
  EXPECT_EQ(code_of([] { parse_loss_csv("a,b\n"); }), ErrorCode::ParseError);
}
