"""
Tool Registry for dit_cache
Maps CLI subcommands to the command classes that implement them
"""

from dit_cache.tools.commands import (
    EvalCommand, PretrainCommand, ProxyTraceCommand, SampleCommand, TrainRouterCommand,
)


class ToolRegistry:
    """Registry for all available subcommands"""

    _tools = {
        'pretrain': {
            'name': 'pretrain',
            'class': PretrainCommand,
            'description': PretrainCommand.description,
        },
        'train-router': {
            'name': 'train-router',
            'class': TrainRouterCommand,
            'description': TrainRouterCommand.description,
        },
        'sample': {
            'name': 'sample',
            'class': SampleCommand,
            'description': SampleCommand.description,
        },
        'eval': {
            'name': 'eval',
            'class': EvalCommand,
            'description': EvalCommand.description,
        },
        'proxy-trace': {
            'name': 'proxy-trace',
            'class': ProxyTraceCommand,
            'description': ProxyTraceCommand.description,
        },
    }

    @classmethod
    def get_all_tools(cls):
        """Get all registered commands"""
        return cls._tools.copy()

    @classmethod
    def create_tool(cls, tool_name):
        """Create an instance of a command"""
        tool_info = cls._tools.get(tool_name)
        if tool_info and tool_info['class']:
            return tool_info['class']()
        return None
