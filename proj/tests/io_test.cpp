#include "activemark/io.hpp"

#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "activemark/bytes.hpp"
#include "activemark/errors.hpp"
#include "activemark/images.hpp"
#include "activemark/trainer.hpp"
#include "support.hpp"

namespace activemark {
namespace {

bool same_parameters(std::vector<const Parameter*> a, std::vector<const Parameter*> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->name != b[i]->name || a[i]->kind != b[i]->kind || !(a[i]->value == b[i]->value)) return false;
  }
  return true;
}

WatermarkKey small_key(std::size_t steps = 0) {
  auto specs = synthetic_specs(6, 3, ImageShape{});
  auto images = generate_images(specs);
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.N = 6;
  cfg.n = 5;
  cfg.batch_size = 3;
  ToyVfm model(ArchConfig{}, 2);
  return train_watermark(model, cfg, images, synthetic_refs(specs, images)).key;
}

void expect_same_key(const WatermarkKey& a, const WatermarkKey& b) {
  EXPECT_EQ(a.format_version, b.format_version);
  EXPECT_EQ(a.triggers, b.triggers);
  EXPECT_EQ(a.messages, b.messages);
  EXPECT_EQ(a.split, b.split);
  EXPECT_EQ(a.n, b.n);
  EXPECT_EQ(a.d, b.d);
  EXPECT_EQ(a.h, b.h);
  EXPECT_EQ(a.tau, b.tau);
  EXPECT_TRUE(same_parameters(a.encoder.parameters(), b.encoder.parameters()));
  EXPECT_TRUE(same_parameters(a.decoder.parameters(), b.decoder.parameters()));
}

TEST(Bytes, LittleEndianRoundTrip) {
  ByteWriter w;
  w.u32(0x01020304);
  w.u64(0x0102030405060708ULL);
  w.f64(-2.5);
  w.f32(0.75f);
  const std::string& s = w.bytes();
  EXPECT_EQ(static_cast<unsigned char>(s[0]), 0x04);
  EXPECT_EQ(static_cast<unsigned char>(s[4]), 0x08);
  ByteReader r(s);
  EXPECT_EQ(r.u32(), 0x01020304u);
  EXPECT_EQ(r.u64(), 0x0102030405060708ULL);
  EXPECT_EQ(r.f64(), -2.5);
  EXPECT_EQ(r.f32(), 0.75f);
  EXPECT_EQ(r.remaining(), 0u);
  EXPECT_THROW(r.u32(), FormatError);
}

TEST(Bytes, FnvKnownValues) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
  EXPECT_EQ(fnv1a("bar", fnv1a("foo")), fnv1a("foobar"));
}

TEST(Bytes, AtomicWriteLeavesNoTempFiles) {
  testing::TempDir dir;
  write_file_atomic(dir / "x.bin", "one");
  write_file_atomic(dir / "x.bin", "two");
  EXPECT_EQ(read_file(dir / "x.bin"), "two");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++files;
  EXPECT_EQ(files, 1u);
  EXPECT_THROW(read_file(dir / "missing"), IoError);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  testing::TempDir dir;
  ArchConfig arch;
  arch.split = 2;
  ToyVfm model(arch, 77);
  model.freeze_prefix();
  CheckpointMeta meta{77, {"gen-model", "prune_l1(0.2)"}};
  save_checkpoint(dir / "m.ckpt", model, meta);
  LoadedCheckpoint back = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(back.meta, meta);
  EXPECT_EQ(back.model.config(), model.config());
  EXPECT_EQ(back.model.freeze_mask(), model.freeze_mask());
  const ToyVfm& cm = model;
  const ToyVfm& cb = back.model;
  EXPECT_TRUE(same_parameters(cm.parameters(), cb.parameters()));
  EXPECT_EQ(encode_checkpoint(back.model, back.meta), encode_checkpoint(model, meta));
}

TEST(Checkpoint, EveryTruncationIsRejected) {
  ToyVfm model(ArchConfig{}, 1);
  const std::string bytes = encode_checkpoint(model, CheckpointMeta{1, {}});
  for (std::size_t cut = 0; cut < bytes.size(); cut += 97) {
    EXPECT_THROW(decode_checkpoint(std::string_view(bytes).substr(0, cut)), FormatError) << cut;
  }
  EXPECT_THROW(decode_checkpoint(std::string_view(bytes).substr(0, bytes.size() - 8)), IntegrityError);
  EXPECT_THROW(decode_checkpoint(std::string_view(bytes).substr(0, bytes.size() - 1000)), IntegrityError);
}

TEST(Checkpoint, FlippedPayloadByteFailsChecksum) {
  ToyVfm model(ArchConfig{}, 1);
  std::string bytes = encode_checkpoint(model, CheckpointMeta{1, {}});
  bytes[bytes.size() - 100] ^= 0x10;
  EXPECT_THROW(decode_checkpoint(bytes), IntegrityError);
}

TEST(Checkpoint, FutureVersionIsRejected) {
  ToyVfm model(ArchConfig{}, 1);
  std::string bytes = encode_checkpoint(model, CheckpointMeta{1, {}});
  bytes[4] = 2;
  EXPECT_THROW(decode_checkpoint(bytes), VersionError);
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
}

TEST(Key, RoundTripPreservesEverything) {
  testing::TempDir dir;
  WatermarkKey key = small_key(4);
  save_key(dir / "k.amk", key);
  WatermarkKey back = load_key(dir / "k.amk");
  expect_same_key(key, back);
  EXPECT_EQ(encode_key(back), encode_key(key));
}

TEST(Key, HeaderTamperingIsDetected) {
  WatermarkKey key = small_key();
  std::string bytes = encode_key(key);
  const auto pos = bytes.find(key.messages[0].to_string());
  ASSERT_NE(pos, std::string::npos);
  bytes[pos] = bytes[pos] == '0' ? '1' : '0';
  EXPECT_THROW(decode_key(bytes), IntegrityError);
  std::string truncated = encode_key(key);
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(decode_key(truncated), IntegrityError);
}

TEST(Key, TriggersRebuildAndVerifyDigests) {
  testing::TempDir dir;
  WatermarkKey key = small_key();
  auto images = load_triggers(key, dir.path());
  ASSERT_EQ(images.size(), key.N());
  for (std::size_t i = 0; i < images.size(); ++i) EXPECT_EQ(image_digest(images[i]), key.triggers[i].digest);

  // File-backed trigger. Raw images hold float32 pixels, so the digest is of the stored image.
  write_raw_image(dir / "t0.amim", images[0]);
  const Tensor stored = read_raw_image(dir / "t0.amim");
  key.triggers[0].source = TriggerRef::Source::file;
  key.triggers[0].path = "t0.amim";
  key.triggers[0].digest = image_digest(stored);
  EXPECT_EQ(load_triggers(key, dir.path())[0], stored);
  key.triggers[0].digest ^= 1;
  EXPECT_THROW(load_triggers(key, dir.path()), IntegrityError);
}

TEST(Report, JsonRoundTrip) {
  testing::TempDir dir;
  VerificationReport r;
  r.suspect_id = "pruned-0.2";
  r.n = 8;
  r.N = 4;
  r.distances = {0, 1, 0, 3};
  r.detection_rate = 2;
  r.verdict = Verdict::inconclusive;
  r.policy = DecisionPolicy{0, 1e-4, 0.05, 1, 3};
  r.p_omega = 0.125;
  r.curve = {0.5, 0.75, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  save_report(dir / "r.json", r);
  EXPECT_EQ(load_report(dir / "r.json"), r);
  auto j = report_to_json(r);
  EXPECT_DOUBLE_EQ(j["gamma1"].get<double>(), 0.875);
  EXPECT_TRUE(j["p_xi"].is_null());
  j["format_version"] = 99;
  EXPECT_THROW(report_from_json(j), VersionError);
}

TEST(Csv, Layouts) {
  EXPECT_EQ(distances_csv(std::vector<std::size_t>{0, 2}, 1), "image_id,distance,detected\n0,0,1\n1,2,0\n");
  EXPECT_EQ(curve_csv(std::vector<double>{0.5, 1.0}).substr(0, 9), "tau,rate\n");
  ActivationProfile p;
  p.per_block = {1.0, 2.0};
  EXPECT_EQ(profile_csv(p).substr(0, 16), "block,mean_topk\n");
  HistoryRow row;
  EXPECT_EQ(history_csv(std::span<const HistoryRow>(&row, 1)).substr(0, 39), "step,loss,fidelity,message_l1,bit_error");
}

TEST(Manifest, RoundTrip) {
  std::vector<ManifestEntry> entries = {
      {"pruned", "prune_l1", {{"fraction", 0.2}}, "pruned.ckpt"},
      {"indep-1", "reinit", {{"seed", 5}}, "indep-1.ckpt"},
  };
  EXPECT_EQ(decode_manifest(encode_manifest(entries)), entries);
  EXPECT_THROW(decode_manifest("{}"), FormatError);
  EXPECT_THROW(decode_manifest("[{"), FormatError);
}

TEST(RawImage, RoundTripAndRejects) {
  testing::TempDir dir;
  Tensor img = generate_image(SyntheticImageSpec{ImageFamily::blob, 4, ImageShape{}});
  write_raw_image(dir / "a.amim", img);
  Tensor back = read_raw_image(dir / "a.amim");
  ASSERT_EQ(back.shape(), img.shape());
  EXPECT_LE(max_abs_difference(back, img), 1e-7);
  EXPECT_EQ(read_file(dir / "a.amim").size(), 16u + 4u * 256u);
  write_file_atomic(dir / "b.amim", "nope");
  EXPECT_THROW(read_raw_image(dir / "b.amim"), FormatError);
}

TEST(Images, DeterministicAndInRange) {
  SyntheticImageSpec spec{ImageFamily::stripes, 9, ImageShape{}};
  Tensor a = generate_image(spec), b = generate_image(spec);
  EXPECT_EQ(a, b);
  for (double v : a.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Images, GradientHasZeroCornerAndOppositeMaximum) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Tensor g = generate_image(SyntheticImageSpec{ImageFamily::gradient, seed, ImageShape{}});
    const double corners[] = {g.data()[0], g.data()[15], g.data()[240], g.data()[255]};
    const double lo = *std::min_element(g.data().begin(), g.data().end());
    const double hi = *std::max_element(g.data().begin(), g.data().end());
    EXPECT_EQ(lo, 0.0);
    EXPECT_LE(hi, 1.0);
    int zero_corner = -1;
    for (int c = 0; c < 4; ++c)
      if (corners[c] == 0.0) zero_corner = c;
    ASSERT_GE(zero_corner, 0) << "seed " << seed;
    EXPECT_EQ(corners[3 - zero_corner], hi) << "seed " << seed;
  }
}

TEST(Images, ThirtyTwoDistinct) {
  std::vector<SyntheticImageSpec> specs;
  for (auto f : kImageFamilies)
    for (std::uint64_t s = 0; s < 8; ++s) specs.push_back(SyntheticImageSpec{f, s, ImageShape{}});
  std::set<std::uint64_t> digests;
  for (const auto& t : generate_images(specs)) digests.insert(image_digest(t));
  EXPECT_EQ(digests.size(), 32u);
}

TEST(Images, FamilyNames) {
  for (auto f : kImageFamilies) EXPECT_EQ(parse_image_family(to_string(f)), f);
  EXPECT_THROW(parse_image_family("noise"), FormatError);
}

}  // namespace
}  // namespace activemark
