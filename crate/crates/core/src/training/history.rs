use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    #[default]
    Completed,
    EarlyStopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    /// Epoch whose parameters were restored, when early stopping is on.
    pub best_epoch: Option<usize>,
    pub restored_best: bool,
    pub total_seconds: f64,
}

impl History {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Validation loss of the parameters the model ended up with.
    pub fn final_val_loss(&self) -> Option<f64> {
        match self.best_epoch {
            Some(e) => self.epochs.iter().find(|r| r.epoch == e).map(|r| r.val_loss),
            None => self.epochs.last().map(|r| r.val_loss),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc,seconds\n");
        for r in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.seconds
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("training history", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let h = History {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
                val_accuracy: 0.75,
                seconds: 2.0,
            }],
            ..History::default()
        };
        assert_eq!(
            h.to_csv(),
            "epoch,train_loss,val_loss,val_acc,seconds\n1,0.5,0.25,0.75,2\n"
        );
        assert!(h.to_json().unwrap().contains("\"stop_reason\": \"completed\""));
        assert_eq!(h.final_val_loss(), Some(0.25));
    }
}
