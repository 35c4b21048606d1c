#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <sstream>
#include <string>

#include <ctxseg/common.hpp>
#include <ctxseg/config.hpp>

using namespace ctxseg;

namespace {

TrainConfig parse(const std::string& text, TrainConfig base = {}) {
  std::istringstream in(text);
  return parse_config_text(in, base);
}

}  // namespace

TEST_CASE("defaults follow the reference protocol and validate") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.epochs == 100);
  CHECK(c.batch_size == 5);
  CHECK(c.learning_rate == 1e-3);
  CHECK(c.seed == 1);
  CHECK(c.context_size == 5);
  CHECK(c.op == EmbeddingOperator::Average);
  CHECK(c.aggregation == Aggregation::Average);
  CHECK(c.resolution == 256);
  CHECK(c.latent_dim == 256);
  CHECK(c.texture_dim == 128);
  CHECK(c.texture_kind == "small-encoder");
  CHECK(c.sae_epochs == 30);
  CHECK(c.tl_epochs == 20);
  CHECK(c.memory_capacity == 0);
}

TEST_CASE("key=value text parses with comments and whitespace") {
  TrainConfig c = parse(
      "# training block\n"
      "\n"
      "epochs = 12\n"
      "  batch_size=3  \n"
      "operator=concat\n"
      "aggregation = sum\n"
      "resolution=64\n"
      "learning_rate=0.01\n"
      "seed=9\n"
      "context_size=2\n"
      "latent_dim=32\n"
      "sae_epochs=0\n"
      "tl_epochs=0\n"
      "memory_capacity=50\n");
  CHECK(c.epochs == 12);
  CHECK(c.batch_size == 3);
  CHECK(c.op == EmbeddingOperator::Concat);
  CHECK(c.aggregation == Aggregation::Sum);
  CHECK(c.resolution == 64);
  CHECK(c.learning_rate == 0.01);
  CHECK(c.seed == 9);
  CHECK(c.context_size == 2);
  CHECK(c.latent_dim == 32);
  CHECK(c.sae_epochs == 0);
  CHECK(c.tl_epochs == 0);
  CHECK(c.memory_capacity == 50);
}

TEST_CASE("parsing layers onto an existing base config") {
  TrainConfig base;
  base.epochs = 7;
  TrainConfig c = parse("batch_size=2\n", base);
  CHECK(c.epochs == 7);
  CHECK(c.batch_size == 2);
}

TEST_CASE("unknown keys and malformed lines are usage errors") {
  CHECK_THROWS_AS(parse("max_epochs=3\n"), UsageError);
  CHECK_THROWS_AS(parse("epochs\n"), UsageError);
  CHECK_THROWS_AS(parse("=3\n"), UsageError);
  CHECK_THROWS_AS(parse(" = \n"), UsageError);
}

TEST_CASE("malformed values are usage errors") {
  CHECK_THROWS_AS(parse("epochs=abc\n"), UsageError);
  CHECK_THROWS_AS(parse("epochs=1.5\n"), UsageError);
  CHECK_THROWS_AS(parse("epochs=-1\n"), UsageError);
  CHECK_THROWS_AS(parse("batch_size=0\n"), UsageError);
  CHECK_THROWS_AS(parse("learning_rate=fast\n"), UsageError);
  CHECK_THROWS_AS(parse("operator=banana\n"), UsageError);
  CHECK_THROWS_AS(parse("aggregation=banana\n"), UsageError);
  CHECK_THROWS_AS(parse("context_size=0\n"), UsageError);
}

TEST_CASE("parsed configs are validated") {
  CHECK_THROWS_AS(parse("learning_rate=0\n"), UsageError);
  CHECK_THROWS_AS(parse("resolution=100\n"), UsageError);
  CHECK_THROWS_AS(parse("latent_dim=24\n"), UsageError);
  CHECK_THROWS_AS(parse("texture_dim=64\n"), UsageError);
  CHECK_THROWS_AS(parse("texture_kind=resnet\n"), UsageError);
  CHECK_THROWS_AS(parse("texture_kind=pretrained-backbone\n"), UsageError);
  CHECK_NOTHROW(parse("texture_kind=pretrained-backbone\npretrained_path=w.ctxb\n"));
}

TEST_CASE("paths may contain equals signs") {
  TrainConfig c = parse("pretrained_path=/tmp/run=3/w.ctxb\n");
  CHECK(c.pretrained_path == "/tmp/run=3/w.ctxb");
}

TEST_CASE("json round trip preserves every field") {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 2;
  c.learning_rate = 0.5;
  c.seed = 1234567;
  c.context_size = 7;
  c.op = EmbeddingOperator::Concat;
  c.aggregation = Aggregation::Sum;
  c.resolution = 96;
  c.latent_dim = 48;
  c.texture_kind = "pretrained-backbone";
  c.pretrained_path = "weights.ctxb";
  c.pca_dim = 16;
  c.sae_epochs = 1;
  c.tl_epochs = 2;
  c.memory_capacity = 11;

  TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.op == EmbeddingOperator::Concat);
  CHECK(back.aggregation == Aggregation::Sum);
  CHECK(back.seed == 1234567);
  CHECK(back.memory_capacity == 11);
}

TEST_CASE("missing config files are data errors") {
  CHECK_THROWS_AS(load_config("/nonexistent/dir/run.cfg"), DataError);
}
