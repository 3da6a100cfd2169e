#include <cstring>

#include "gtest/gtest.h"
#include "nrsfm/checkpoint.hpp"
#include "nrsfm/errors.hpp"
#include "nrsfm/train.hpp"
#include "test_util.hpp"

namespace nrsfm {
namespace {

Checkpoint sample(std::uint64_t seed) {
  Checkpoint c;
  c.params = init_params(LayerSizes{7, {9, 5, 2}}, seed);
  c.step = 12345;
  c.coherence = final_coherence(c.params);
  return c;
}

TEST(Checkpoint, HeaderLayout) {
  const std::string bytes = serialize_checkpoint(sample(1));
  ASSERT_GE(bytes.size(), 8u + 4 + 4 + 4);
  EXPECT_EQ(bytes.substr(0, 8), "NRSFMCKP");
  std::uint32_t version = 0, p = 0, n = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&p, bytes.data() + 12, 4);
  std::memcpy(&n, bytes.data() + 16, 4);
  EXPECT_EQ(version, kCheckpointVersion);
  EXPECT_EQ(p, 7u);
  EXPECT_EQ(n, 3u);
  const std::size_t header = 8 + 4 + 4 + 4 + 3 * 4 + 8 + 8;
  EXPECT_EQ(bytes.size(), header + 8 * sample(1).params.scalar_count());
}

TEST(Checkpoint, RoundTripIsExactAndByteStable) {
  const Checkpoint c = sample(2);
  const std::string bytes = serialize_checkpoint(c);
  EXPECT_EQ(serialize_checkpoint(sample(2)), bytes);
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.step, c.step);
  EXPECT_EQ(back.coherence, c.coherence);
  EXPECT_EQ(back.params.sizes, c.params.sizes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);

  const auto dir = testing_util::scratch_dir("checkpoint");
  save_checkpoint(c, dir / "c.bin");
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(dir / "c.bin")), bytes);
}

TEST(Checkpoint, RejectsCorruptInput) {
  const std::string bytes = serialize_checkpoint(sample(3));
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), Error);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);
  EXPECT_THROW(deserialize_checkpoint(bytes + "junk"), Error);
  bad = bytes;
  bad[8] = 9;
  EXPECT_THROW(deserialize_checkpoint(bad), Error);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/ckpt.bin"), Error);
}

}  // namespace
}  // namespace nrsfm
