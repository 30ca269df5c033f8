fn main() {
    let code = lora_serve::cli::run(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
