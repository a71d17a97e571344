fn main() -> std::process::ExitCode {
    brgcn::cli::main()
}
