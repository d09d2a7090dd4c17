pub mod assign;
pub mod design;
pub mod estimate;
pub mod simulate;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Human,
    Json,
}

pub trait Report: Serialize {
    fn human(&self) -> String;

    fn render(&self, format: Format) -> String {
        match format {
            Format::Human => self.human(),
            Format::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
        }
    }
}

fn parse_mechanism(s: &str) -> Result<car_late_core::Mechanism, String> {
    s.parse().map_err(|e: car_late_core::Error| e.to_string())
}
