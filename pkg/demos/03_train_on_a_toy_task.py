"""Train the actor-critic on a task small enough to solve by brute force.

Two images, three steps, and a rigged score that rewards putting image 1
first and then pushing image 0 to the right.  The agent should find the
best sequence in a few hundred episodes.

Run:  python3 demos/03_train_on_a_toy_task.py
"""
from collage_rl.env import EnvConfig
from collage_rl.synthetic import square_set
from collage_rl.training import TrainConfig, collect_rollouts, train

images = square_set(2, 0, side=48)
cfg = EnvConfig(max_step=3, layout_budget=1, autocrop=False, canvas_long_side=64)


def rigged(state):
    return state.placements[0].center_x / 5.0 + (2.0 if state.order[0] == 1 else 0.0)


tc = TrainConfig(max_epoch=10, episodes_per_epoch=50, batch_size=10, sign_reward_epochs=0, lr=3e-3)
params, log = train(tc, [images], cfg, score_fn=rigged,
                    progress=lambda r: print(f"epoch {r['epoch']:2d}  mean return {r['mean_return']:6.3f}"
                                             f"  entropy {r['entropy']:.2f}"))

episode = collect_rollouts(params, [images], cfg, 1, seed=0, greedy=True, score_fn=rigged)[0]
print(f"greedy return {episode.total_return:.3f} (best possible 10.34)")
