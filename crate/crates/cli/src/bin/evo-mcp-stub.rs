//! Stub MCP server exposing `add`, `lookup` and `exec`, for probing and tests.
//!
//! `evo-mcp-stub --port 0` serves HTTP and prints its URL; `--stdio` speaks
//! newline-delimited JSON-RPC on stdin/stdout.

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use evo_core::tools::stub::{serve_stdio, McpStubServer};

#[derive(Parser)]
#[command(name = "evo-mcp-stub", version, about = "Stub MCP server")]
struct Args {
    /// TCP port on 127.0.0.1; 0 picks a free one.
    #[arg(long, default_value_t = 0)]
    port: u16,
    #[arg(long, conflicts_with = "port")]
    stdio: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.stdio {
        let stdin = std::io::stdin();
        return match serve_stdio(stdin.lock(), std::io::stdout()) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(3)
            }
        };
    }
    match McpStubServer::bind(&format!("127.0.0.1:{}", args.port)) {
        Ok(server) => {
            println!("{}", server.url());
            let _ = std::io::stdout().flush();
            server.wait();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
