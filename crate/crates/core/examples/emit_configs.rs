//! Regenerate the checked-in scenario configuration files from the built-in
//! catalog: `cargo run -p calwave --example emit_configs [dir]`.

use calwave::scenario::{builtin_scenario, write_config, ScenarioId};

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "configs".into());
    std::fs::create_dir_all(&dir).expect("create config dir");
    for id in [ScenarioId::Ex3, ScenarioId::Ex4] {
        let config = builtin_scenario(id);
        let path = std::path::Path::new(&dir).join(format!("{}.toml", config.name));
        write_config(&config, &path).expect("write config");
        println!("wrote {}", path.display());
    }
}
