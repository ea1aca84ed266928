// SPDX-License-Identifier: MIT OR Apache-2.0

use ensim::cli::{main_with, LOG_ENV};

fn main() {
    let filter = std::env::var(LOG_ENV).unwrap_or_else(|_| "off".into());
    env_logger::Builder::new().parse_filters(&filter).format_timestamp(None).init();
    let code = main_with(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
