// Copyright 2026 The hybridcnn Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <CLI11.hpp>

#include <exception>
#include <iostream>

#include "hybridcnn/cli/commands.hpp"
#include "hybridcnn/errors.hpp"

namespace {

void add_common(CLI::App* sub, hybridcnn::cli::RunConfig& c) {
  sub->add_option("--net", c.net, "cosmoflow or unet_mini")->capture_default_str();
  sub->add_option("--wi", c.wi, "input width W_i");
  sub->add_option("--grid", c.grid, "process grid GxPDxPHxPW")->capture_default_str();
  sub->add_option("--batch,-N", c.batch, "global mini-batch size")->capture_default_str();
  sub->add_option("--seed", c.seed, "random seed")->capture_default_str();
  sub->add_option("--fp", c.fp, "precision, 32 or 64 (default 32 for train, 64 otherwise)");
  sub->add_option("--output,-o", c.output, "output path (default stdout)");
  sub->add_flag("--parallel-ranks", c.parallel, "run rank threads concurrently instead of one at a time");
  sub->add_flag("--bn", c.batchnorm, "CosmoFlow with batch normalization after each convolution");
}

}  // namespace

int main(int argc, char** argv) {
  hybridcnn::cli::RunConfig cfg;
  CLI::App app{"Hybrid data/spatial-parallel 3D CNN training on simulated ranks"};
  app.set_config("--config", "", "read options from a TOML/INI file");
  app.require_subcommand(1);
  app.fallthrough();

  auto* verify = app.add_subcommand("verify", "compare a distributed pass against the serial fp64 oracle");
  add_common(verify, cfg);

  auto* train = app.add_subcommand("train", "train on a dataset and write epoch,train_loss,val_loss rows");
  add_common(train, cfg);
  train->add_option("--dataset", cfg.dataset, "manifest file");
  train->add_option("--synthetic", cfg.synthetic, "generate a synthetic dataset of S samples");
  train->add_option("--data-dir", cfg.data_dir, "where --synthetic writes its samples");
  train->add_option("--epochs", cfg.epochs, "number of epochs")->capture_default_str();
  train->add_option("--lr", cfg.lr, "initial learning rate")->capture_default_str();
  train->add_option("--optimizer", cfg.optimizer, "adam or sgd")->capture_default_str();
  train->add_option("--val", cfg.val_samples, "validation samples taken from the end (default S/8)");

  auto* perf = app.add_subcommand("perf", "evaluate the performance model and write a cost breakdown");
  add_common(perf, cfg);
  perf->add_option("--kernels", cfg.kernels, "kernel table kind,phase,n,c,d,h,w,seconds");
  perf->add_flag("--ideal", cfg.ideal, "use a flop-proportional kernel table");
  perf->add_option("--pingpong", cfg.pingpong, "bytes,seconds samples (default: free links)");
  perf->add_option("--inter-pingpong", cfg.inter_pingpong, "inter-node bytes,seconds samples");
  perf->add_option("--ranks-per-node", cfg.ranks_per_node, "ranks sharing a node for link classes");
  perf->add_option("--allreduce", cfg.allreduce, "elements,ranks,seconds samples (default: free allreduce)");

  auto* flops = app.add_subcommand("flops", "print parameter, flop and memory rows per width");
  flops->add_option("--net", cfg.net, "cosmoflow or unet_mini")->capture_default_str();
  flops->add_option("--wi", cfg.wi, "widths (default 128 256 512)");
  flops->add_option("--output,-o", cfg.output, "output path (default stdout)");
  flops->add_flag("--bn", cfg.batchnorm, "CosmoFlow with batch normalization");

  auto* fixtures = app.add_subcommand("make-fixtures", "write a synthetic dataset and its manifest");
  fixtures->add_option("--samples,-S", cfg.samples, "sample count")->capture_default_str();
  fixtures->add_option("--dims", cfg.dims, "CxDxHxW")->capture_default_str();
  fixtures->add_option("--dtype", cfg.dtype, "int16 or fp32")->capture_default_str();
  fixtures->add_option("--seed", cfg.seed, "random seed")->capture_default_str();
  fixtures->add_flag("--labels", cfg.labels, "also write per-voxel class label files");
  fixtures->add_flag("--dry-run", cfg.dry_run, "print sizes without writing");
  fixtures->add_option("--output,-o", cfg.output, "output directory");

  CLI11_PARSE(app, argc, argv);
  cfg.command = app.get_subcommands().front()->get_name();
  try {
    return hybridcnn::cli::run_command(cfg, std::cout);
  } catch (const hybridcnn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
