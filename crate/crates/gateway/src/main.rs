fn main() {
    std::process::exit(planforge_gateway::cli_dispatch(std::env::args_os()));
}
