//! Echo-stub bridge: every position predicts a repeat of its input token.
//!
//! Speaks the bridge protocol on stdio, or on TCP with `--listen ADDR`
//! (one connection at a time).

use std::io::{BufReader, BufWriter};
use std::net::TcpListener;

use clap::Parser;
use memlab::bridge::{serve_echo, EchoModel};

#[derive(Parser)]
#[command(name = "memlab-echo-bridge", about = "Echo-stub model bridge for protocol tests")]
struct Args {
    #[arg(long, default_value_t = 512)]
    vocab_size: usize,
    #[arg(long, default_value_t = 511)]
    bos_token_id: u32,
    #[arg(long, default_value_t = 4096)]
    max_seq_len: usize,
    /// Serve TCP on this address instead of stdio.
    #[arg(long)]
    listen: Option<String>,
}

fn main() {
    let args = Args::parse();
    if args.bos_token_id as usize >= args.vocab_size {
        eprintln!("bos id must be inside the vocabulary");
        std::process::exit(2);
    }
    let model = EchoModel::new(args.vocab_size, args.bos_token_id, args.max_seq_len);
    let result = match &args.listen {
        None => serve_echo(&model, std::io::stdin().lock(), std::io::stdout().lock()),
        Some(addr) => TcpListener::bind(addr).map_err(Into::into).and_then(|l| {
            eprintln!("listening on {}", l.local_addr()?);
            for stream in l.incoming() {
                let stream = stream?;
                let reader = BufReader::new(stream.try_clone()?);
                if let Err(e) = serve_echo(&model, reader, BufWriter::new(stream)) {
                    eprintln!("connection ended: {e}");
                }
            }
            Ok(())
        }),
    };
    if let Err(e) = result {
        eprintln!("echo bridge: {e}");
        std::process::exit(1);
    }
}
