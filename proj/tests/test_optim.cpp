// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "csi2cloud/checkpoint.hpp"
#include "csi2cloud/ops.hpp"
#include "csi2cloud/optim.hpp"

using namespace c2c;

TEST_CASE("adamw first step follows the bias-corrected closed form") {
  Parameter w("w", Tensor::from_values({1}, {1.0}));
  AdamW opt({&w}, {0.001, 0.9, 0.999, 1e-8, 0.0});
  w.value.grad_mut()[0] = 0.5;
  opt.step();
  // Bias correction makes the first step ~ -lr * sign(g).
  CHECK(w.value[0] == Catch::Approx(1.0 - 0.001).epsilon(1e-6));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adamw zero gradient and zero decay leaves parameters unchanged") {
  Parameter w("w", Tensor::from_values({3}, {1.0, -2.0, 0.5}));
  AdamW opt({&w}, {0.01, 0.9, 0.999, 1e-8, 0.0});
  opt.step();
  CHECK(w.value[0] == 1.0);
  CHECK(w.value[1] == -2.0);
  CHECK(w.value[2] == 0.5);
}

TEST_CASE("adamw decoupled weight decay shrinks parameters directly") {
  Parameter w("w", Tensor::from_values({1}, {2.0}));
  AdamW opt({&w}, {0.1, 0.9, 0.999, 1e-8, 0.5});
  opt.step();  // zero grad: only the decay acts
  CHECK(w.value[0] == Catch::Approx(2.0 - 0.1 * 0.5 * 2.0));
}

TEST_CASE("adamw descends a quadratic") {
  Parameter w("w", Tensor::from_values({1}, {1.0}));
  AdamW opt({&w}, {0.05, 0.9, 0.999, 1e-8, 0.0});
  auto loss_value = [&] { return 0.5 * w.value[0] * w.value[0]; };
  const double initial = loss_value();
  for (int i = 0; i < 2; ++i) {
    opt.zero_grad();
    w.value.grad_mut()[0] = w.value[0];  // d/dw of w^2/2
    opt.step();
  }
  CHECK(loss_value() < initial);
}

TEST_CASE("adamw rejects parameters without gradients") {
  Parameter p;
  p.name = "raw";
  p.value = Tensor::from_values({2}, {1.0, 2.0});  // requires_grad never set
  CHECK_THROWS_AS(AdamW({&p}), ContractViolation);
}

TEST_CASE("adamw step count increases by one per update") {
  Parameter w("w", Tensor::zeros({4}));
  AdamW opt({&w});
  for (std::uint64_t i = 1; i <= 5; ++i) {
    opt.step();
    CHECK(opt.step_count() == i);
  }
}

TEST_CASE("gradient clipping caps the global norm") {
  Parameter a("a", Tensor::zeros({2}));
  Parameter b("b", Tensor::zeros({1}));
  a.value.grad_mut()[0] = 3.0;
  a.value.grad_mut()[1] = 0.0;
  b.value.grad_mut()[0] = 4.0;
  const double before = clip_grad_norm({&a, &b}, 1.0);
  CHECK(before == Catch::Approx(5.0));
  double sq = 0.0;
  for (double g : a.value.grad()) sq += g * g;
  for (double g : b.value.grad()) sq += g * g;
  CHECK(std::sqrt(sq) == Catch::Approx(1.0));

  // Below the cap: untouched.
  a.value.zero_grad();
  b.value.zero_grad();
  a.value.grad_mut()[0] = 0.3;
  clip_grad_norm({&a, &b}, 1.0);
  CHECK(a.value.grad()[0] == 0.3);
}

TEST_CASE("checkpoint round trip is byte-identical") {
  std::vector<CheckpointEntry> entries = {
      {"layer0.weight", {2, 3}, {0.1, -2.5e-17, 3.14159265358979312, 4, 5e300, -0.0}},
      {"layer0.bias", {3}, {1.0 / 3.0, 2.0 / 7.0, -1e-308}},
      {"scalar", {}, {42.0}},
  };
  const std::string once = serialize_checkpoint(entries);
  const std::vector<CheckpointEntry> parsed = parse_checkpoint(once);
  REQUIRE(parsed.size() == entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    CHECK(parsed[i].name == entries[i].name);
    CHECK(parsed[i].shape == entries[i].shape);
    REQUIRE(parsed[i].values.size() == entries[i].values.size());
    for (std::size_t j = 0; j < entries[i].values.size(); ++j) {
      CHECK(parsed[i].values[j] == entries[i].values[j]);  // exact
    }
  }
  CHECK(serialize_checkpoint(parsed) == once);

  const std::filesystem::path path =
      std::filesystem::temp_directory_path() / "c2c_ckpt_test.ckpt";
  save_checkpoint(path, entries);
  CHECK(serialize_checkpoint(load_checkpoint(path)) == once);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects malformed input") {
  CHECK_THROWS_AS(parse_checkpoint("not-a-checkpoint v9\n0\n"), ParseError);
  CHECK_THROWS_AS(parse_checkpoint("csi2cloud-checkpoint v1\n1\nw 1 2 3\n1 2 3\n"), ParseError);
  CHECK_THROWS_AS(parse_checkpoint("csi2cloud-checkpoint v1\n1\nw 1 2 2\n1\n"), ParseError);
}
