#include <gtest/gtest.h>

#include <vector>

#include "modalfuse/adam.hpp"
#include "modalfuse/error.hpp"
#include "test_support.hpp"

using modalfuse::AdamOptions;
using modalfuse::AdamState;
using modalfuse::Error;
using modalfuse::Tensor;

TEST(Adam, ZeroGradientLeavesParamsAndCountsStep) {
  std::vector<Tensor> params = {Tensor::vector({0.5, -1.0}), Tensor({2, 2}, 3.0)};
  const std::vector<Tensor> before = params;
  const std::vector<Tensor> grads = {Tensor({2}, 0.0), Tensor({2, 2}, 0.0)};
  AdamState state;
  modalfuse::adam_step(params, grads, state, AdamOptions{});
  EXPECT_EQ(params, before);
  EXPECT_EQ(state.t, 1u);
  modalfuse::adam_step(params, grads, state, AdamOptions{});
  EXPECT_EQ(state.t, 2u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<Tensor> params = {Tensor::scalar(0.0)};
  const std::vector<Tensor> grads = {Tensor::scalar(1.0)};
  AdamState state;
  AdamOptions options;
  options.lr = 0.1;
  modalfuse::adam_step(params, grads, state, options);
  EXPECT_NEAR(params[0][0], -0.1, 1e-6);
}

TEST(Adam, MomentsStartAtZeroAndMatchShapes) {
  std::vector<Tensor> params = {Tensor({3, 2}, 1.0)};
  AdamState state;
  modalfuse::adam_step(params, std::vector<Tensor>{Tensor({3, 2}, 0.0)}, state, AdamOptions{});
  ASSERT_EQ(state.m.size(), 1u);
  EXPECT_EQ(state.m[0], Tensor({3, 2}, 0.0));
  EXPECT_EQ(state.v[0], Tensor({3, 2}, 0.0));
}

TEST(Adam, IdenticalRunsAreBitIdentical) {
  auto run = [] {
    modalfuse::Rng rng = modalfuse::make_rng(5, 0);
    std::vector<Tensor> params = {mf_test::random_tensor({4, 3}, rng)};
    AdamState state;
    for (int i = 0; i < 20; ++i) {
      std::vector<Tensor> grads = {mf_test::random_tensor({4, 3}, rng)};
      modalfuse::adam_step(params, grads, state, AdamOptions{1e-2});
    }
    return params;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, OnlyParamsAndStateChange) {
  std::vector<Tensor> params = {Tensor::vector({1.0, 2.0})};
  const std::vector<Tensor> grads = {Tensor::vector({0.3, -0.7})};
  const std::vector<Tensor> grads_copy = grads;
  AdamState state;
  modalfuse::adam_step(params, grads, state, AdamOptions{});
  EXPECT_EQ(grads, grads_copy);
}

TEST(Adam, ShapeMismatchAndBadLearningRate) {
  std::vector<Tensor> params = {Tensor({2}, 0.0)};
  AdamState state;
  try {
    modalfuse::adam_step(params, std::vector<Tensor>{Tensor({3}, 0.0)}, state, AdamOptions{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), modalfuse::ErrorKind::kDimension);
  }
  try {
    modalfuse::adam_step(params, std::vector<Tensor>{}, state, AdamOptions{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), modalfuse::ErrorKind::kDimension);
  }
  try {
    modalfuse::adam_step(params, std::vector<Tensor>{Tensor({2}, 0.0)}, state, AdamOptions{0.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), modalfuse::ErrorKind::kInvalidArgument);
  }
}
