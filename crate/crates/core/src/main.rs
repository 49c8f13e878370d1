fn main() {
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    let code = refine_core::harness::cli::cli_main(std::env::args_os(), &mut out, &mut err);
    std::process::exit(code);
}
