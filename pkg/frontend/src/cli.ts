/**
 * Process-boundary plumbing: locate and invoke the pipeline CLI.
 *
 * The command defaults to `atriaseg` on PATH and can be overridden with
 * the ATRIASEG_CLI environment variable (e.g. "python -m atriaseg.cli").
 * Calls are asynchronous, so the Node event loop stays free while the
 * native computation runs in its own process.
 */

import { execFile } from "node:child_process";

export interface CliResult {
  stdout: string;
  stderr: string;
}

function cliCommand(): string[] {
  const override = process.env.ATRIASEG_CLI;
  if (override && override.trim().length > 0) {
    return override.trim().split(/\s+/);
  }
  return ["atriaseg"];
}

export function runCli(args: string[], timeoutMs = 600_000): Promise<CliResult> {
  const [command, ...prefix] = cliCommand();
  return new Promise((resolve, reject) => {
    execFile(
      command as string,
      [...prefix, ...args],
      { timeout: timeoutMs, maxBuffer: 64 * 1024 * 1024 },
      (error, stdout, stderr) => {
        if (error) {
          const detail = stderr.trim() || stdout.trim() || error.message;
          reject(new Error(`atriaseg CLI failed (${args[0]}): ${detail}`));
        } else {
          resolve({ stdout, stderr });
        }
      },
    );
  });
}
