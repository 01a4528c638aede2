#pragma once

#include "sibre/config.hpp"

namespace sibre::cli {

// Subcommand bodies; each validates the config, writes its outputs plus a
// config snapshot under out_dir, and throws sibre::Error on failure.
void cmd_generate(const config::RunConfig& cfg);
void cmd_train(const config::RunConfig& cfg);
void cmd_eval(const config::RunConfig& cfg);
void cmd_sweep(const config::RunConfig& cfg);
void cmd_verify_ib(const config::RunConfig& cfg);
void cmd_gradcheck(const config::RunConfig& cfg);

} // namespace sibre::cli
