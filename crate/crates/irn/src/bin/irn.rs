//! Thin executable wrapper: all behaviour lives in [`irn::cli`].

fn main() {
    if let Err(e) = irn::cli::main_from_args(std::env::args_os()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
