#pragma once

namespace swlora {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitVerify = 2, kExitRuntime = 3 };

/// Entry point of the `swlora` tool: train, eval, analyze-rank, estimate,
/// verify and sweep subcommands.
int run_cli(int argc, char** argv);

}  // namespace swlora
