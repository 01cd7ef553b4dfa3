use ndarray::Array2;

use crate::env::EnvState;

/// Feature layout: one bit per task, then a one-hot tool slot of width
/// `num_tools + 1` where slot 0 is "no tool".
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObservationEncoder {
    pub num_tasks: usize,
    pub num_tools: usize,
}

impl ObservationEncoder {
    pub fn new(num_tasks: usize, num_tools: usize) -> Self {
        ObservationEncoder {
            num_tasks,
            num_tools,
        }
    }

    pub fn width(&self) -> usize {
        self.num_tasks + self.num_tools + 1
    }

    pub fn encode(&self, state: &EnvState) -> Vec<f64> {
        let mut row = vec![0.0; self.width()];
        self.write(state, &mut row);
        row
    }

    fn write(&self, state: &EnvState, row: &mut [f64]) {
        row.fill(0.0);
        for t in state.done.iter() {
            row[t.index()] = 1.0;
        }
        row[self.num_tasks + state.tool_digit()] = 1.0;
    }

    /// One row per state.
    pub fn encode_batch<'a, I>(&self, states: I) -> Array2<f64>
    where
        I: IntoIterator<Item = &'a EnvState>,
        I::IntoIter: ExactSizeIterator,
    {
        let states = states.into_iter();
        let mut out = Array2::zeros((states.len(), self.width()));
        for (mut row, state) in out.rows_mut().into_iter().zip(states) {
            self.write(state, row.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{TaskId, TaskSet, ToolId};

    #[test]
    fn encodes_done_bits_and_tool() {
        let enc = ObservationEncoder::new(8, 2);
        assert_eq!(enc.width(), 11);
        let state = EnvState {
            done: [1, 4].iter().map(|&n| TaskId::from_number(n).unwrap()).collect(),
            tool: ToolId::new(1),
        };
        assert_eq!(
            enc.encode(&state),
            vec![1., 0., 0., 1., 0., 0., 0., 0., 0., 1., 0.]
        );
        assert_eq!(
            enc.encode(&EnvState::initial()),
            vec![0., 0., 0., 0., 0., 0., 0., 0., 1., 0., 0.]
        );
        let full = EnvState {
            done: TaskSet::full(8),
            tool: ToolId::new(2),
        };
        assert_eq!(
            enc.encode(&full),
            vec![1., 1., 1., 1., 1., 1., 1., 1., 0., 0., 1.]
        );
        let batch = enc.encode_batch([state, full].iter());
        assert_eq!(batch.row(1).to_vec(), enc.encode(&full));
    }
}
