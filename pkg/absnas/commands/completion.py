import click
from click.shell_completion import get_completion_class

from .main import CLICK_COMMAND_DEFAULTS, main

COMPLETE_VAR = "_ABSNAS_COMPLETE"

SHELLS = ("bash", "fish", "zsh")


@main.command(**CLICK_COMMAND_DEFAULTS)
@click.argument("shell", type=click.Choice(SHELLS))
def completion(shell: str):
    """
    Print the autocompletion script for SHELL.

    \b
    Save it and source it, for example:
    $ absnas completion bash > ~/.absnas-complete.bash && . ~/.absnas-complete.bash
    $ absnas completion fish > ~/.config/fish/completions/absnas.fish
    """
    completer = get_completion_class(shell)
    assert completer is not None
    click.echo(completer(main, {}, "absnas", COMPLETE_VAR).source())
