fn main() -> std::process::ExitCode {
    vnn_arena::cli::main()
}
