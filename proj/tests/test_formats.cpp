#include <gtest/gtest.h>

#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace qbiv;
using namespace qbiv::testing;

namespace {

template <class Read, class Write>
void expect_stable(const std::string& bytes, Read read, Write write) {
  std::istringstream in(bytes);
  const auto value = read(in);
  std::ostringstream out;
  write(out, value);
  EXPECT_EQ(out.str(), bytes);
}

template <class Read>
void expect_format_error(const std::string& bytes, Read read) {
  std::istringstream in(bytes);
  try {
    read(in);
    ADD_FAILURE() << "expected a format error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::format) << e.what();
  }
}

const auto kWritePca = [](std::ostream& o, const PcaModel& m) { write_model(o, m); };
const auto kWriteGmm = [](std::ostream& o, const DiagonalGmm& g) { write_model(o, g); };
const auto kReadDescriptors = [](std::istream& i) { return read_descriptors(i); };
const auto kWriteFilters = [](std::ostream& o, const FilterSet& s) { write_filter_set(o, s.config, s.filters); };

struct Fixture {
  SyntheticDataset ds = generate_synthetic(small_spec(6));
  Embedding emb = fit_embedding(ds, 5, 3);
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST(Formats, DescriptorsRoundTrip) {
  CounterRng rng(1);
  const auto bytes = to_bytes(random_set(rng, 17, 5), write_descriptors);
  expect_stable(bytes, kReadDescriptors, write_descriptors);
  const auto empty = to_bytes(DescriptorSet("e", Matrix(0, 4)), write_descriptors);
  expect_stable(empty, kReadDescriptors, write_descriptors);
}

TEST(Formats, ModelsRoundTrip) {
  const auto& f = fixture();
  expect_stable(to_bytes(f.emb.pca, kWritePca), read_pca, kWritePca);
  expect_stable(to_bytes(f.emb.gmm, kWriteGmm), read_gmm, kWriteGmm);
  // Reading the wrong kind is a format error.
  expect_format_error(to_bytes(f.emb.pca, kWritePca), read_gmm);
}

TEST(Formats, HashBanksRoundTrip) {
  const auto& f = fixture();
  for (auto family : {HashFamily::lsh_c, HashFamily::lsh_s, HashFamily::lsh_b, HashFamily::vq}) {
    const auto bank = make_bank(f.emb, PipelineKind::bf_pi, family, HashDomain::gbh, 3);
    const auto bytes = to_bytes(bank, write_hash_bank);
    expect_stable(bytes, read_hash_bank, write_hash_bank);
    std::istringstream in(bytes);
    EXPECT_TRUE(read_hash_bank(in) == bank) << to_string(family);
  }
}

TEST(Formats, FilterSetsRoundTrip) {
  CounterRng rng(2);
  for (bool partitioned : {true, false}) {
    const auto cfg = partitioned ? FilterConfig::make_partitioned(3, 40) : FilterConfig::make_non_partitioned(3, 100);
    FilterSet set{cfg, {}};
    for (int s = 0; s < 4; ++s) {
      SceneFilter f("scene" + std::to_string(s), cfg);
      for (int i = 0; i < 20; ++i) f.set(rng.below(bit_budget(cfg)));
      set.filters.push_back(f);
    }
    const auto bytes = to_bytes(set, kWriteFilters);
    expect_stable(bytes, read_filter_set, kWriteFilters);
    std::istringstream in(bytes);
    const auto back = read_filter_set(in);
    for (std::size_t s = 0; s < 4; ++s) EXPECT_EQ(back.filters[s].popcount(), set.filters[s].popcount());
  }
}

TEST(Formats, IndexesRoundTrip) {
  const auto& f = fixture();
  for (auto pipeline : {PipelineKind::bf_gd, PipelineKind::bf_pi}) {
    const auto models = make_models(f.emb, pipeline, HashFamily::vq, HashDomain::gbh, 3);
    for (bool partitioned : {true, false}) {
      const auto cfg = filter_config_for(models.bank().config, partitioned);
      const auto built = build_index(bloom_pipeline(pipeline), f.ds.scenes, f.ds.loader(), models, cfg);
      expect_stable(to_bytes(built.index, write_index), read_index, write_index);
    }
  }
}

TEST(Formats, FvStarRoundTrip) {
  const auto& f = fixture();
  for (const auto& db : {build_scene_fv_star(f.ds.scenes, f.ds.loader(), f.emb.gmm, f.emb.pca),
                         build_shot_fv_star(f.ds.scenes, f.ds.loader(), f.emb.gmm, f.emb.pca),
                         build_frame_fv_star(f.ds.scenes, f.ds.loader(), f.emb.gmm, f.emb.pca)}) {
    const auto bytes = to_bytes(db, write_fv_star_database);
    expect_stable(bytes, read_fv_star_database, write_fv_star_database);
    std::istringstream in(bytes);
    EXPECT_TRUE(read_fv_star_database(in) == db);
  }
}

TEST(Formats, CorruptInputsAreRejected) {
  CounterRng rng(3);
  const auto good = to_bytes(random_set(rng, 3, 2), write_descriptors);
  expect_format_error(good.substr(0, good.size() - 1), kReadDescriptors);
  expect_format_error("QIVX" + good.substr(4), kReadDescriptors);
  std::string wrong_version = good;
  wrong_version[4] = 2;
  expect_format_error(wrong_version, kReadDescriptors);

  const auto& f = fixture();
  const auto models = make_models(f.emb, PipelineKind::bf_pi, HashFamily::lsh_c, HashDomain::gbh, 3);
  const auto index = build_bf_pi(f.ds.scenes, f.ds.loader(), models, filter_config_for(models.bank().config, true)).index;
  const auto bytes = to_bytes(index, write_index);
  expect_format_error(bytes.substr(0, bytes.size() - 3), read_index);
  std::string bad_pipeline = bytes;
  bad_pipeline[8] = 7;
  expect_format_error(bad_pipeline, read_index);

  const auto bank = to_bytes(models.bank(), write_hash_bank);
  std::string bad_bits = bank;
  bad_bits[14] = 30;  // n > 24
  expect_format_error(bad_bits, read_hash_bank);
}
