#!/usr/bin/env python3
"""
Render simulator CSV outputs as PNG figures.

Usage:
    python scripts/plot_results.py --queries results/queries.csv --out-dir figures
    python scripts/plot_results.py --toy-policy results/toy_policy.csv --out-dir figures
    python scripts/plot_results.py --training-curve results/training_curve.csv --out-dir figures
"""
import os
import argparse
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import pandas as pd


def plot_query_boxplots(csv_paths, labels, out_dir):
    """
    One boxplot panel per query kind comparing the squared errors of several runs.
    """
    frames = []
    for path, label in zip(csv_paths, labels):
        df = pd.read_csv(path)
        df['policy'] = label
        frames.append(df)
    df = pd.concat(frames, ignore_index=True)
    if df.empty:
        print("No query records found.")
        return []
    outputs = []
    for kind, group in df.groupby('query_kind'):
        data = [group.loc[group['policy'] == label, 'sq_error'].to_numpy() for label in labels]
        plt.figure(figsize=(8, 4))
        plt.boxplot(data, showfliers=False)
        plt.xticks(range(1, len(labels) + 1), labels)
        plt.title(f"Squared error, {kind} query")
        plt.ylabel("Squared error")
        plt.grid(True, axis='y')
        plt.tight_layout()
        safe = ''.join(ch if ch.isalnum() else '_' for ch in kind)
        out_png = os.path.join(out_dir, f"mse_{safe}.png")
        plt.savefig(out_png)
        plt.close()
        outputs.append(out_png)
        print(f"Boxplot saved to {out_png}")
    return outputs


def plot_toy_policy(csv_path, out_dir):
    """
    Action heatmap over the age grid for each pair of observed values.
    """
    df = pd.read_csv(csv_path)
    fig, axes = plt.subplots(1, 4, figsize=(16, 4))
    for ax, ((o1, o2), group) in zip(axes, df.groupby(['o1', 'o2'])):
        grid = group.pivot(index='delta2', columns='delta1', values='action')
        ax.imshow(grid.values, origin='lower', cmap='coolwarm', vmin=1, vmax=2,
                  extent=[grid.columns.min() - 0.5, grid.columns.max() + 0.5,
                          grid.index.min() - 0.5, grid.index.max() + 0.5])
        ax.set_title(f"o = ({o1}, {o2})")
        ax.set_xlabel("age of chain 1")
        ax.set_ylabel("age of chain 2")
    plt.tight_layout()
    out_png = os.path.join(out_dir, "toy_policy.png")
    plt.savefig(out_png)
    plt.close(fig)
    print(f"Toy policy heatmap saved to {out_png}")
    return out_png


def plot_training_curve(csv_path, out_dir):
    df = pd.read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(10, 5))
    ax.plot(df['episode'], df['cost'], lw=2, label='episode cost')
    ax.set_xlabel("Episode")
    ax.set_ylabel("Overall cost")
    ax.grid(True)
    ax2 = ax.twinx()
    ax2.plot(df['episode'], df['temperature'], color='gray', ls='--', label='temperature')
    ax2.set_ylabel("Softmax temperature")
    plt.title("DQN training curve")
    plt.tight_layout()
    out_png = os.path.join(out_dir, "training_curve.png")
    plt.savefig(out_png)
    plt.close(fig)
    print(f"Training curve saved to {out_png}")
    return out_png


if __name__ == '__main__':
    p = argparse.ArgumentParser(description="Plot simulator results.")
    p.add_argument('--queries', nargs='*', default=[], help='queries.csv files, one per policy')
    p.add_argument('--labels', nargs='*', default=[], help='Labels for the queries files')
    p.add_argument('--toy-policy', help='toy_policy.csv from the toy subcommand')
    p.add_argument('--training-curve', help='training_curve.csv from the train subcommand')
    p.add_argument('--out-dir', default='figures', help='Directory for PNG files')
    args = p.parse_args()
    os.makedirs(args.out_dir, exist_ok=True)
    if args.queries:
        labels = args.labels or [os.path.basename(os.path.dirname(os.path.abspath(q))) for q in args.queries]
        plot_query_boxplots(args.queries, labels, args.out_dir)
    if args.toy_policy:
        plot_toy_policy(args.toy_policy, args.out_dir)
    if args.training_curve:
        plot_training_curve(args.training_curve, args.out_dir)
