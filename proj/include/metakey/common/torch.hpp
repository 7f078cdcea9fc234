#pragma once

// Minimal libtorch surface used across the project: ATen tensor ops plus the
// autograd entry points. Avoids pulling in the torch::nn / optim front end.
#include <ATen/ATen.h>
#include <ATen/Parallel.h>
#include <ATen/core/grad_mode.h>
#include <torch/csrc/autograd/autograd.h>
#include <torch/csrc/autograd/variable.h>
